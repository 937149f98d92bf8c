//! Text form: `coef * x<i>^<k> * ...` terms joined by ` + `, leading term
//! first in graded-lex order. Variable indices are zero-based. The zero
//! polynomial prints as `0`.

use std::fmt;

use super::{Monomial, Poly, PolyError};
use crate::Scalar;

fn fmt_coef<T: Scalar>(c: T) -> String {
    let a = c.abs();
    if a != T::zero() && (a < T::lit(1e-4) || a >= T::lit(1e15)) {
        format!("{c:e}")
    } else {
        format!("{c}")
    }
}

impl<T: Scalar> fmt::Display for Poly<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let mut first = true;
        for (m, &c) in self.terms().rev() {
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            f.write_str(&fmt_coef(c))?;
            for (v, e) in m.powers() {
                if e == 1 {
                    write!(f, " * x{v}")?;
                } else {
                    write!(f, " * x{v}^{e}")?;
                }
            }
        }
        Ok(())
    }
}

struct Lexer<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn err(&self, what: &str) -> PolyError {
        PolyError::Parse(format!("{what} at byte {}", self.pos))
    }

    fn number(&mut self) -> Result<f64, PolyError> {
        self.skip_ws();
        let start = self.pos;
        let s = self.s;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        if i == start {
            return Err(self.err("expected number"));
        }
        self.pos = i;
        std::str::from_utf8(&s[start..i])
            .ok()
            .and_then(|t| t.parse::<f64>().ok())
            .ok_or_else(|| self.err("malformed number"))
    }

    fn uint(&mut self) -> Result<u32, PolyError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.s[start..self.pos])
            .ok()
            .and_then(|t| t.parse::<u32>().ok())
            .ok_or_else(|| self.err("expected unsigned integer"))
    }
}

impl<T: Scalar> Poly<T> {
    /// Parses the text form. Accepts `+`/`-` between terms, optional
    /// coefficients, and factors in any order (`x0 * 2 * x1^3`).
    pub fn parse(text: &str, nvars: usize) -> Result<Self, PolyError> {
        let mut lx = Lexer {
            s: text.as_bytes(),
            pos: 0,
        };
        let mut terms: Vec<(Monomial, T)> = Vec::new();
        let mut sign = 1.0;
        if let Some(b'-') = lx.peek() {
            sign = -1.0;
            lx.pos += 1;
        } else if let Some(b'+') = lx.peek() {
            lx.pos += 1;
        }
        loop {
            // one term
            let mut coef = sign;
            let mut pairs: Vec<(usize, u32)> = Vec::new();
            loop {
                match lx.peek() {
                    Some(b'x') => {
                        lx.pos += 1;
                        let v = lx.uint()? as usize;
                        if v >= nvars {
                            return Err(PolyError::VariableOutOfRange { var: v, nvars });
                        }
                        let mut e = 1;
                        if let Some(b'^') = lx.peek() {
                            lx.pos += 1;
                            e = lx.uint()?;
                        }
                        pairs.push((v, e));
                    }
                    Some(b'-') => {
                        // unary minus inside a term, as in `+ -2 * x0`
                        lx.pos += 1;
                        coef = -coef;
                        continue;
                    }
                    Some(c) if c.is_ascii_digit() || c == b'.' => {
                        coef *= lx.number()?;
                    }
                    _ => return Err(lx.err("expected factor")),
                }
                if let Some(b'*') = lx.peek() {
                    lx.pos += 1;
                } else {
                    break;
                }
            }
            terms.push((Monomial::from_pairs(pairs), T::lit(coef)));
            match lx.peek() {
                None => break,
                Some(b'+') => {
                    lx.pos += 1;
                    sign = 1.0;
                }
                Some(b'-') => {
                    lx.pos += 1;
                    sign = -1.0;
                }
                Some(_) => return Err(lx.err("expected `+`, `-` or end")),
            }
        }
        Self::from_terms(nvars, terms)
    }
}

#[cfg(test)]
mod tests {
    use crate::{Monomial, Polynomial};

    #[test]
    fn prints_leading_term_first() {
        let p = Polynomial::from_terms(
            2,
            [
                (Monomial::var(1), -0.5),
                (Monomial::from_pairs([(0, 2), (1, 1)]), 2.0),
                (Monomial::one(), 3.0),
            ],
        )
        .unwrap();
        assert_eq!(p.to_string(), "2 * x0^2 * x1 + -0.5 * x1 + 3");
        assert_eq!(Polynomial::zero(4).to_string(), "0");
    }

    #[test]
    fn parse_accepts_loose_forms() {
        let p = Polynomial::parse("x0^2 - 3*x1 + 2 * x0 * 0.5 - -1e-3", 2).unwrap();
        assert_eq!(p.coeff(&Monomial::var_pow(0, 2)), 1.0);
        assert_eq!(p.coeff(&Monomial::var(1)), -3.0);
        assert_eq!(p.coeff(&Monomial::var(0)), 1.0);
        assert_eq!(p.constant_term(), 1e-3);
        assert!(Polynomial::parse("x2", 2).is_err());
        assert!(Polynomial::parse("3 * * x0", 2).is_err());
        assert!(Polynomial::parse("0", 2).unwrap().is_zero());
    }

    #[test]
    fn extreme_coefficients_use_exponent_form() {
        let p = Polynomial::from_terms(1, [(Monomial::var(0), 1.25e-9), (Monomial::one(), 7e20)])
            .unwrap();
        let s = p.to_string();
        assert_eq!(s, "1.25e-9 * x0 + 7e20");
        assert_eq!(Polynomial::parse(&s, 1).unwrap(), p);
    }
}
