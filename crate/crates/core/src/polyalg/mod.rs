//! Sparse multivariate polynomials over a real scalar.
//!
//! Terms are kept in a `BTreeMap` keyed by [`Monomial`] in graded
//! lexicographic order, so two equal polynomials always have identical term
//! maps and identical text form. Coefficients smaller than
//! [`PRUNE_TOL`] in magnitude are dropped after every arithmetic operation.

mod monomial;
mod text;

use std::collections::{BTreeMap, BTreeSet};
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

use crate::Scalar;

pub use monomial::Monomial;

/// Coefficients with magnitude below this are removed after arithmetic.
pub const PRUNE_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected} variables, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("variable x{var} out of range for {nvars} variables")]
    VariableOutOfRange { var: usize, nvars: usize },
    #[error("cannot parse polynomial: {0}")]
    Parse(String),
}

/// Binary operations accepted by [`combine`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Operand<'a, T: Scalar> {
    Poly(&'a Poly<T>),
    Scalar(T),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombineOp {
    Add,
    Sub,
    Mul,
    Scale,
}

/// A polynomial in `nvars` real variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly<T: Scalar> {
    nvars: usize,
    terms: BTreeMap<Monomial, T>,
}

impl<T: Scalar> Poly<T> {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: T) -> Self {
        Self::from_terms(nvars, [(Monomial::one(), c)]).expect("constant has no variables")
    }

    /// The coordinate polynomial `x_var`.
    pub fn var(nvars: usize, var: usize) -> Result<Self, PolyError> {
        Self::from_terms(nvars, [(Monomial::var(var), T::one())])
    }

    pub fn monomial(nvars: usize, m: Monomial, c: T) -> Result<Self, PolyError> {
        Self::from_terms(nvars, [(m, c)])
    }

    /// Builds a polynomial, summing repeated monomials and pruning zeros.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (Monomial, T)>,
    {
        let mut map: BTreeMap<Monomial, T> = BTreeMap::new();
        for (m, c) in terms {
            if let Some(v) = m.max_var() {
                if v >= nvars {
                    return Err(PolyError::VariableOutOfRange { var: v, nvars });
                }
            }
            let e = map.entry(m).or_insert_with(T::zero);
            *e = *e + c;
        }
        let mut p = Self { nvars, terms: map };
        p.prune();
        Ok(p)
    }

    fn prune(&mut self) {
        let tol = T::lit(PRUNE_TOL);
        self.terms.retain(|_, c| c.abs() >= tol);
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Terms in increasing graded-lex order.
    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, &T)> {
        self.terms.iter()
    }

    pub fn coeff(&self, m: &Monomial) -> T {
        self.terms.get(m).copied().unwrap_or_else(T::zero)
    }

    pub fn constant_term(&self) -> T {
        self.coeff(&Monomial::one())
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Smallest total degree among the terms (0 for the zero polynomial).
    pub fn min_degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).min().unwrap_or(0)
    }

    pub fn max_abs_coeff(&self) -> T {
        self.terms.values().fold(T::zero(), |m, c| m.max(c.abs()))
    }

    /// Variables that actually occur in some term.
    pub fn variables(&self) -> BTreeSet<usize> {
        self.terms
            .keys()
            .flat_map(|m| m.powers().map(|(v, _)| v))
            .collect()
    }

    fn check_dim(&self, other: usize) -> Result<(), PolyError> {
        if self.nvars != other {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                got: other,
            });
        }
        Ok(())
    }

    /// Exact term-by-term evaluation.
    pub fn eval(&self, x: &[T]) -> Result<T, PolyError> {
        self.check_dim(x.len())?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[T]) -> T {
        let mut acc = T::zero();
        for (m, &c) in &self.terms {
            let mut t = c;
            for (v, e) in m.powers() {
                t = t * x[v].powi(e as i32);
            }
            acc = acc + t;
        }
        acc
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_dim(other.nvars)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            let e = out.terms.entry(m.clone()).or_insert_with(T::zero);
            *e = *e + c;
        }
        out.prune();
        Ok(out)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_dim(other.nvars)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            let e = out.terms.entry(m.clone()).or_insert_with(T::zero);
            *e = *e - c;
        }
        out.prune();
        Ok(out)
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_dim(other.nvars)?;
        let mut map: BTreeMap<Monomial, T> = BTreeMap::new();
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                let e = map.entry(ma.mul(mb)).or_insert_with(T::zero);
                *e = *e + ca * cb;
            }
        }
        let mut out = Self {
            nvars: self.nvars,
            terms: map,
        };
        out.prune();
        Ok(out)
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = Self {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(m, &c)| (m.clone(), c * s))
                .collect(),
        };
        out.prune();
        out
    }

    /// `self * m * c` for a single term.
    pub fn mul_term(&self, m: &Monomial, c: T) -> Self {
        let mut out = Self {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(mm, &cc)| (mm.mul(m), cc * c))
                .collect(),
        };
        out.prune();
        out
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut acc = Self::constant(self.nvars, T::one());
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    /// `∂p/∂x_var`.
    pub fn derivative(&self, var: usize) -> Self {
        let mut map: BTreeMap<Monomial, T> = BTreeMap::new();
        for (m, &c) in &self.terms {
            if let Some((e, dm)) = m.derive(var) {
                let entry = map.entry(dm).or_insert_with(T::zero);
                *entry = *entry + c * T::lit(e as f64);
            }
        }
        let mut out = Self {
            nvars: self.nvars,
            terms: map,
        };
        out.prune();
        out
    }

    /// Gradient `[∂p/∂x_0, …, ∂p/∂x_{n-1}]`.
    pub fn grad(&self) -> Vec<Self> {
        (0..self.nvars).map(|k| self.derivative(k)).collect()
    }

    /// Returns `q` with `q(x) = p(x + shift)`.
    pub fn substitute(&self, shift: &[T]) -> Result<Self, PolyError> {
        self.check_dim(shift.len())?;
        // (x_v + s_v)^e expanded once per (variable, exponent)
        let mut cache: BTreeMap<(usize, u32), Self> = BTreeMap::new();
        let mut out = Self::zero(self.nvars);
        for (m, &c) in &self.terms {
            let mut term = Self::constant(self.nvars, c);
            for (v, e) in m.powers() {
                let factor = cache.entry((v, e)).or_insert_with(|| {
                    let base = Self::from_terms(
                        self.nvars,
                        [(Monomial::var(v), T::one()), (Monomial::one(), shift[v])],
                    )
                    .expect("variable in range");
                    base.pow(e)
                });
                term = &term * &*factor;
            }
            out = &out + &term;
        }
        Ok(out)
    }

    /// Splits into (terms containing at least one of `vars`, the rest).
    pub fn split_by_vars(&self, vars: &[usize]) -> (Self, Self) {
        let mut with = BTreeMap::new();
        let mut without = BTreeMap::new();
        for (m, &c) in &self.terms {
            if m.contains_any(vars) {
                with.insert(m.clone(), c);
            } else {
                without.insert(m.clone(), c);
            }
        }
        (
            Self {
                nvars: self.nvars,
                terms: with,
            },
            Self {
                nvars: self.nvars,
                terms: without,
            },
        )
    }

    /// Sets the listed variables to zero.
    pub fn zero_vars(&self, vars: &[usize]) -> Self {
        self.split_by_vars(vars).1
    }

    /// Drops every term of total degree below `min_keep`.
    pub fn truncate_below(&self, min_keep: u32) -> Self {
        Self {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| m.degree() >= min_keep)
                .map(|(m, &c)| (m.clone(), c))
                .collect(),
        }
    }

    /// Homogeneous component of total degree `d`.
    pub fn homogeneous_part(&self, d: u32) -> Self {
        Self {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| m.degree() == d)
                .map(|(m, &c)| (m.clone(), c))
                .collect(),
        }
    }

    /// Re-embeds into `nvars` variables, renaming through `map`.
    pub fn remap(&self, nvars: usize, map: impl Fn(usize) -> usize) -> Result<Self, PolyError> {
        Self::from_terms(nvars, self.terms.iter().map(|(m, &c)| (m.remap(&map), c)))
    }

    /// Converts the coefficients to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Poly<U> {
        let mut out = Poly {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(m, c)| {
                    (
                        m.clone(),
                        U::from_f64(c.to_f64().unwrap_or(0.0)).unwrap_or_else(U::zero),
                    )
                })
                .collect(),
        };
        out.prune();
        out
    }
}

/// Ring operation dispatcher with dimension checking.
pub fn combine<T: Scalar>(
    op: CombineOp,
    a: &Poly<T>,
    b: Operand<'_, T>,
) -> Result<Poly<T>, PolyError> {
    match (op, b) {
        (CombineOp::Add, Operand::Poly(b)) => a.try_add(b),
        (CombineOp::Sub, Operand::Poly(b)) => a.try_sub(b),
        (CombineOp::Mul, Operand::Poly(b)) => a.try_mul(b),
        (CombineOp::Scale, Operand::Scalar(s)) | (CombineOp::Mul, Operand::Scalar(s)) => {
            Ok(a.scale(s))
        }
        (CombineOp::Add, Operand::Scalar(s)) => a.try_add(&Poly::constant(a.nvars, s)),
        (CombineOp::Sub, Operand::Scalar(s)) => a.try_sub(&Poly::constant(a.nvars, s)),
        (CombineOp::Scale, Operand::Poly(b)) => a.try_mul(b),
    }
}

/// `Σ a_k · b_k`, e.g. a gradient dotted with a vector field.
pub fn dot<T: Scalar>(a: &[Poly<T>], b: &[Poly<T>]) -> Result<Poly<T>, PolyError> {
    if a.len() != b.len() {
        return Err(PolyError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let nvars = a.first().map(|p| p.nvars).unwrap_or(0);
    let mut acc = Poly::zero(nvars);
    for (x, y) in a.iter().zip(b) {
        acc = acc.try_add(&x.try_mul(y)?)?;
    }
    Ok(acc)
}

// Operator sugar. These panic on a variable-count mismatch; use the `try_*`
// methods or `combine` where the inputs are not known to agree.

impl<T: Scalar> Add for &Poly<T> {
    type Output = Poly<T>;
    fn add(self, rhs: Self) -> Poly<T> {
        self.try_add(rhs).expect("polynomial dimension mismatch")
    }
}

impl<T: Scalar> Sub for &Poly<T> {
    type Output = Poly<T>;
    fn sub(self, rhs: Self) -> Poly<T> {
        self.try_sub(rhs).expect("polynomial dimension mismatch")
    }
}

impl<T: Scalar> Mul for &Poly<T> {
    type Output = Poly<T>;
    fn mul(self, rhs: Self) -> Poly<T> {
        self.try_mul(rhs).expect("polynomial dimension mismatch")
    }
}

impl<T: Scalar> Neg for &Poly<T> {
    type Output = Poly<T>;
    fn neg(self) -> Poly<T> {
        self.scale(-T::one())
    }
}

impl<T: Scalar> Add for Poly<T> {
    type Output = Poly<T>;
    fn add(self, rhs: Self) -> Poly<T> {
        &self + &rhs
    }
}

impl<T: Scalar> Sub for Poly<T> {
    type Output = Poly<T>;
    fn sub(self, rhs: Self) -> Poly<T> {
        &self - &rhs
    }
}

impl<T: Scalar> Mul for Poly<T> {
    type Output = Poly<T>;
    fn mul(self, rhs: Self) -> Poly<T> {
        &self * &rhs
    }
}

impl<T: Scalar> Neg for Poly<T> {
    type Output = Poly<T>;
    fn neg(self) -> Poly<T> {
        -&self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Polynomial;

    fn x(n: usize, i: usize) -> Polynomial {
        Polynomial::var(n, i).unwrap()
    }

    #[test]
    fn eval_hand_values() {
        let p = &(&x(2, 0) * &x(2, 0)) + &(&x(2, 0) * &x(2, 1)).scale(2.0);
        assert_eq!(p.eval(&[1.0, 1.0]).unwrap(), 3.0);
        assert_eq!(Polynomial::zero(3).eval(&[0.3, -2.0, 9.0]).unwrap(), 0.0);
        assert!(matches!(
            p.eval(&[1.0]),
            Err(PolyError::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn grad_identities() {
        let p = &x(2, 0) * &x(2, 0);
        let g = p.grad();
        assert_eq!(g[0], x(2, 0).scale(2.0));
        assert!(g[1].is_zero());
        let c = Polynomial::constant(3, 4.0);
        assert!(c.grad().iter().all(Poly::is_zero));
        assert_eq!(c.grad().len(), 3);
    }

    #[test]
    fn difference_of_squares() {
        let a = &x(2, 0) + &x(2, 1);
        let b = &x(2, 0) - &x(2, 1);
        let expect = &(&x(2, 0) * &x(2, 0)) - &(&x(2, 1) * &x(2, 1));
        assert_eq!(&a * &b, expect);
        assert!((&a + &a.scale(-1.0)).is_zero());
    }

    #[test]
    fn shift_univariate() {
        let p = &x(1, 0) * &x(1, 0);
        let q = p.substitute(&[1.0]).unwrap();
        let expect = Polynomial::from_terms(
            1,
            [
                (Monomial::var_pow(0, 2), 1.0),
                (Monomial::var(0), 2.0),
                (Monomial::one(), 1.0),
            ],
        )
        .unwrap();
        assert_eq!(q, expect);
        assert_eq!(p.substitute(&[0.0]).unwrap(), p);
    }

    #[test]
    fn combine_checks_dims() {
        let a = x(2, 0);
        let b = x(3, 0);
        assert!(combine(CombineOp::Add, &a, Operand::Poly(&b)).is_err());
        let s = combine(CombineOp::Scale, &a, Operand::Scalar(3.0)).unwrap();
        assert_eq!(s.coeff(&Monomial::var(0)), 3.0);
    }

    #[test]
    fn tiny_coefficients_pruned() {
        let a = Polynomial::from_terms(1, [(Monomial::var(0), 1.0)]).unwrap();
        let b = Polynomial::from_terms(1, [(Monomial::var(0), 1.0 - 1e-15)]).unwrap();
        assert!((&a - &b).is_zero());
    }

    #[test]
    fn out_of_range_variable_rejected() {
        assert!(Polynomial::var(2, 2).is_err());
    }

    #[test]
    fn works_in_f32() {
        let p = Poly::<f32>::var(1, 0).unwrap().pow(2);
        assert_eq!(p.eval(&[3.0f32]).unwrap(), 9.0f32);
    }
}
