use std::cmp::Ordering;

/// A power product `x_{v0}^{e0} * x_{v1}^{e1} * ...`.
///
/// Stored as `(variable, exponent)` pairs sorted by variable, with no zero
/// exponents, so equal monomials have identical representations.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Monomial {
    powers: Vec<(u32, u32)>,
}

impl Monomial {
    /// The constant monomial `1`.
    pub fn one() -> Self {
        Self { powers: Vec::new() }
    }

    pub fn var(index: usize) -> Self {
        Self::var_pow(index, 1)
    }

    pub fn var_pow(index: usize, exp: u32) -> Self {
        if exp == 0 {
            return Self::one();
        }
        Self {
            powers: vec![(index as u32, exp)],
        }
    }

    /// Builds a monomial from arbitrary `(variable, exponent)` pairs.
    /// Repeated variables are merged and zero exponents dropped.
    pub fn from_pairs<I: IntoIterator<Item = (usize, u32)>>(pairs: I) -> Self {
        let mut powers: Vec<(u32, u32)> = pairs
            .into_iter()
            .filter(|&(_, e)| e > 0)
            .map(|(v, e)| (v as u32, e))
            .collect();
        powers.sort_unstable_by_key(|p| p.0);
        let mut merged: Vec<(u32, u32)> = Vec::with_capacity(powers.len());
        for (v, e) in powers {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += e,
                _ => merged.push((v, e)),
            }
        }
        Self { powers: merged }
    }

    /// Builds a monomial from a dense exponent vector.
    pub fn from_exponents(exps: &[u32]) -> Self {
        Self::from_pairs(exps.iter().enumerate().map(|(v, &e)| (v, e)))
    }

    pub fn is_one(&self) -> bool {
        self.powers.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.powers.iter().map(|p| p.1).sum()
    }

    pub fn exponent(&self, var: usize) -> u32 {
        self.powers
            .binary_search_by_key(&(var as u32), |p| p.0)
            .map(|i| self.powers[i].1)
            .unwrap_or(0)
    }

    /// `(variable, exponent)` pairs in increasing variable order.
    pub fn powers(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.powers.iter().map(|&(v, e)| (v as usize, e))
    }

    /// Largest variable index present, if any.
    pub fn max_var(&self) -> Option<usize> {
        self.powers.last().map(|p| p.0 as usize)
    }

    pub fn contains_any(&self, vars: &[usize]) -> bool {
        self.powers.iter().any(|p| vars.contains(&(p.0 as usize)))
    }

    pub fn only_in(&self, vars: &[usize]) -> bool {
        self.powers.iter().all(|p| vars.contains(&(p.0 as usize)))
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.powers.len() + other.powers.len());
        let (mut i, mut j) = (0, 0);
        while i < self.powers.len() && j < other.powers.len() {
            let (a, b) = (self.powers[i], other.powers[j]);
            match a.0.cmp(&b.0) {
                Ordering::Less => {
                    out.push(a);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a.0, a.1 + b.1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.powers[i..]);
        out.extend_from_slice(&other.powers[j..]);
        Monomial { powers: out }
    }

    /// `self / other` when `other` divides `self`.
    pub fn div(&self, other: &Monomial) -> Option<Monomial> {
        let mut out = Vec::with_capacity(self.powers.len());
        let mut j = 0;
        for &(v, e) in &self.powers {
            if j < other.powers.len() && other.powers[j].0 < v {
                return None;
            }
            if j < other.powers.len() && other.powers[j].0 == v {
                let d = other.powers[j].1;
                if d > e {
                    return None;
                }
                if e > d {
                    out.push((v, e - d));
                }
                j += 1;
            } else {
                out.push((v, e));
            }
        }
        if j < other.powers.len() {
            return None;
        }
        Some(Monomial { powers: out })
    }

    /// Partial derivative: `(exponent, monomial / x_var)` or `None` if the
    /// variable is absent.
    pub fn derive(&self, var: usize) -> Option<(u32, Monomial)> {
        let pos = self.powers.iter().position(|p| p.0 as usize == var)?;
        let e = self.powers[pos].1;
        let mut powers = self.powers.clone();
        if e == 1 {
            powers.remove(pos);
        } else {
            powers[pos].1 -= 1;
        }
        Some((e, Monomial { powers }))
    }

    /// Renames variables through `map` (old index -> new index).
    pub fn remap(&self, map: impl Fn(usize) -> usize) -> Monomial {
        Monomial::from_pairs(self.powers().map(|(v, e)| (map(v), e)))
    }
}

impl Ord for Monomial {
    /// Graded lexicographic order: total degree first, then the first
    /// variable with differing exponent decides (larger exponent is larger).
    fn cmp(&self, other: &Self) -> Ordering {
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        let (mut i, mut j) = (0, 0);
        loop {
            match (self.powers.get(i), other.powers.get(j)) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Greater,
                (None, Some(_)) => return Ordering::Less,
                (Some(a), Some(b)) => {
                    if a.0 != b.0 {
                        // the one holding the smaller variable index has a
                        // positive exponent where the other has zero
                        return if a.0 < b.0 {
                            Ordering::Greater
                        } else {
                            Ordering::Less
                        };
                    }
                    if a.1 != b.1 {
                        return a.1.cmp(&b.1);
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
    }
}

impl std::fmt::Display for Monomial {
    /// `x0^2 * x3`, or `1` for the constant monomial.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_one() {
            return f.write_str("1");
        }
        for (k, (v, e)) in self.powers().enumerate() {
            if k > 0 {
                f.write_str(" * ")?;
            }
            if e == 1 {
                write!(f, "x{v}")?;
            } else {
                write!(f, "x{v}^{e}")?;
            }
        }
        Ok(())
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grlex_order() {
        let one = Monomial::one();
        let x0 = Monomial::var(0);
        let x1 = Monomial::var(1);
        let x0x1 = Monomial::from_pairs([(0, 1), (1, 1)]);
        let x0sq = Monomial::var_pow(0, 2);
        let x1sq = Monomial::var_pow(1, 2);
        let mut v = vec![
            x1sq.clone(),
            x0.clone(),
            one.clone(),
            x0x1.clone(),
            x1.clone(),
            x0sq.clone(),
        ];
        v.sort();
        assert_eq!(v, vec![one, x1, x0, x1sq, x0x1, x0sq]);
    }

    #[test]
    fn mul_div_roundtrip() {
        let a = Monomial::from_pairs([(0, 2), (3, 1)]);
        let b = Monomial::from_pairs([(1, 1), (3, 2)]);
        let c = a.mul(&b);
        assert_eq!(c, Monomial::from_pairs([(0, 2), (1, 1), (3, 3)]));
        assert_eq!(c.div(&b), Some(a.clone()));
        assert_eq!(a.div(&b), None);
        assert_eq!(c.degree(), 6);
    }

    #[test]
    fn zero_exponents_dropped() {
        let m = Monomial::from_exponents(&[0, 2, 0, 1]);
        assert_eq!(m.powers().collect::<Vec<_>>(), vec![(1, 2), (3, 1)]);
        assert_eq!(Monomial::var_pow(4, 0), Monomial::one());
    }
}
