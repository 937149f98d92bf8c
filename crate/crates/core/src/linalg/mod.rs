//! Small dense linear algebra: Cholesky, cyclic Jacobi eigensolver, LU with
//! partial pivoting, and the Metzler/Hurwitz test used on comparison
//! matrices.

mod matrix;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

pub use matrix::{dot, Matrix};

/// Symmetric-only routines accept at most this much asymmetry.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Cholesky reports indefiniteness when a pivot drops below `-CHOLESKY_NEG_TOL`.
pub const CHOLESKY_NEG_TOL: f64 = 1e-10;
/// Off-diagonal entries of a Metzler matrix may be this negative (then clamped).
pub const METZLER_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semidefinite (pivot {pivot:e} at {index})")]
    NotPositiveSemidefinite { index: usize, pivot: f64 },
    #[error("matrix is singular")]
    SingularMatrix,
    #[error("Jacobi eigensolver did not converge in {0} sweeps")]
    NonConvergence(usize),
    #[error("matrix is not Metzler: entry ({row},{col}) = {value:e}")]
    NotMetzler { row: usize, col: usize, value: f64 },
}

fn require_square<T: Scalar>(a: &Matrix<T>) -> Result<(), LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    Ok(())
}

fn require_symmetric<T: Scalar>(a: &Matrix<T>) -> Result<(), LinalgError> {
    require_square(a)?;
    let asym = a.asymmetry();
    if asym > T::lit(SYMMETRY_TOL) * T::one().max(a.max_abs()) {
        return Err(LinalgError::NotSymmetric(asym.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(())
}

/// Lower-triangular `L` with `L·Lᵀ = S`.
///
/// Pivots in `[-CHOLESKY_NEG_TOL, 0]` are treated as exact zeros (the
/// column is zeroed), so rank-deficient PSD matrices factor.
pub fn cholesky<T: Scalar>(s: &Matrix<T>) -> Result<Matrix<T>, LinalgError> {
    require_symmetric(s)?;
    let n = s.rows();
    let mut l = Matrix::zeros(n, n);
    let neg_tol = T::lit(CHOLESKY_NEG_TOL);
    for j in 0..n {
        let mut d = s[(j, j)];
        for k in 0..j {
            d = d - l[(j, k)] * l[(j, k)];
        }
        if d < -neg_tol {
            return Err(LinalgError::NotPositiveSemidefinite {
                index: j,
                pivot: d.to_f64().unwrap_or(f64::NAN),
            });
        }
        if d <= T::zero() {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut v = s[(i, j)];
            for k in 0..j {
                v = v - l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix with nonzero diagonal.
pub fn lower_inverse<T: Scalar>(l: &Matrix<T>) -> Result<Matrix<T>, LinalgError> {
    require_square(l)?;
    let n = l.rows();
    let mut inv = Matrix::zeros(n, n);
    for j in 0..n {
        if l[(j, j)] == T::zero() {
            return Err(LinalgError::SingularMatrix);
        }
        inv[(j, j)] = T::one() / l[(j, j)];
        for i in (j + 1)..n {
            let mut s = T::zero();
            for k in j..i {
                s = s + l[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -s / l[(i, i)];
        }
    }
    Ok(inv)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as the columns of the second value.
pub fn sym_eigen<T: Scalar>(s: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>), LinalgError> {
    require_symmetric(s)?;
    let n = s.rows();
    let mut a = s.clone();
    a.symmetrize();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius();
    let eps = T::epsilon();
    let mut converged = n <= 1 || scale == T::zero();
    let mut sweep = 0;
    while !converged {
        if sweep == JACOBI_MAX_SWEEPS {
            return Err(LinalgError::NonConvergence(JACOBI_MAX_SWEEPS));
        }
        sweep += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // negligible relative to both diagonal entries: drop it
                if apq.abs() <= eps * T::lit(0.5) * (app.abs().sqrt() * aqq.abs().sqrt()) {
                    a[(p, q)] = T::zero();
                    a[(q, p)] = T::zero();
                    continue;
                }
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let t = if theta == T::zero() { T::one() } else { t };
                let c = T::one() / (t * t + T::one()).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                a[(p, q)] = T::zero();
                a[(q, p)] = T::zero();
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off + a[(p, q)] * a[(p, q)];
            }
        }
        converged = off.sqrt() <= eps * scale * T::lit(1e-2) || off == T::zero();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[(i, i)]
            .partial_cmp(&a[(j, j)])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = order.iter().map(|&i| a[(i, i)]).collect();
    let vecs = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((vals, vecs))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<T: Scalar>(s: &Matrix<T>) -> Result<T, LinalgError> {
    let (vals, _) = sym_eigen(s)?;
    Ok(vals.first().copied().unwrap_or_else(T::zero))
}

/// LU factorization with partial pivoting, reusable for several right-hand sides.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    pub fn factor(a: &Matrix<T>) -> Result<Self, LinalgError> {
        Self::factor_inner(a, false)
    }

    /// Like [`Lu::factor`], but pivots below the singularity threshold are
    /// replaced by the threshold itself (static pivoting). The factors then
    /// belong to a nearby matrix; pair with iterative refinement.
    pub fn factor_static(a: &Matrix<T>) -> Result<Self, LinalgError> {
        Self::factor_inner(a, true)
    }

    fn factor_inner(a: &Matrix<T>, perturb: bool) -> Result<Self, LinalgError> {
        require_square(a)?;
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let tiny = T::epsilon() * T::lit_usize(n.max(1)) * a.max_abs();
        if perturb && !(tiny > T::zero()) {
            return Err(LinalgError::SingularMatrix);
        }
        for k in 0..n {
            let mut piv = k;
            let mut best = lu[(k, k)].abs();
            for i in (k + 1)..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best <= tiny || best == T::zero() {
                if !perturb {
                    return Err(LinalgError::SingularMatrix);
                }
                lu[(piv, k)] = if lu[(piv, k)] < T::zero() {
                    -tiny
                } else {
                    tiny
                };
            }
            if piv != k {
                perm.swap(piv, k);
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(piv, j)];
                    lu[(piv, j)] = t;
                }
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f == T::zero() {
                    continue;
                }
                for j in (k + 1)..n {
                    let u = lu[(k, j)];
                    lu[(i, j)] = lu[(i, j)] - f * u;
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>, LinalgError> {
        let n = self.lu.rows();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch(format!(
                "rhs of length {} for {n}x{n} system",
                b.len()
            )));
        }
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s = s - self.lu[(i, k)] * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s = s - self.lu[(i, k)] * x[k];
            }
            x[i] = s / self.lu[(i, i)];
        }
        Ok(x)
    }
}

/// Solves `A·x = b` by LU with partial pivoting.
pub fn solve_linear<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>, LinalgError> {
    Lu::factor(a)?.solve(b)
}

/// Outcome of the Hurwitz test on a Metzler matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HurwitzVerdict {
    /// Strictly diagonally dominant rows with negative diagonal.
    HurwitzByDominance,
    /// All leading principal minors of `-A` are positive.
    HurwitzByMinors,
    NotHurwitz,
}

impl HurwitzVerdict {
    pub fn is_hurwitz(self) -> bool {
        !matches!(self, HurwitzVerdict::NotHurwitz)
    }
}

/// Hurwitz test for a Metzler matrix.
///
/// `-A` is a Z-matrix, and a Z-matrix is a nonsingular M-matrix exactly when
/// its leading principal minors are positive, which for Metzler `A` is the
/// same as `A` being Hurwitz. The minors are pivot products of Gaussian
/// elimination without pivoting.
pub fn metzler_hurwitz<T: Scalar>(a: &Matrix<T>) -> Result<HurwitzVerdict, LinalgError> {
    require_square(a)?;
    let n = a.rows();
    let mut m = a.clone();
    let tol = T::lit(METZLER_TOL);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = m[(i, j)];
            if v < -tol {
                return Err(LinalgError::NotMetzler {
                    row: i,
                    col: j,
                    value: v.to_f64().unwrap_or(f64::NAN),
                });
            }
            if v < T::zero() {
                m[(i, j)] = T::zero();
            }
        }
    }
    let dominant = (0..n).all(|i| {
        let off = (0..n)
            .filter(|&j| j != i)
            .fold(T::zero(), |s, j| s + m[(i, j)]);
        m[(i, i)] < T::zero() && off < -m[(i, i)]
    });
    if dominant {
        return Ok(HurwitzVerdict::HurwitzByDominance);
    }
    // elimination on -A without pivoting; pivot k = minor_k / minor_{k-1}
    let mut b = m.scale(-T::one());
    let rel = T::lit(1e-10);
    let mut running = T::zero();
    for k in 0..n {
        let p = b[(k, k)];
        running = running.max(p.abs());
        if p <= rel * running || p <= T::zero() {
            return Ok(HurwitzVerdict::NotHurwitz);
        }
        for i in (k + 1)..n {
            let f = b[(i, k)] / p;
            if f == T::zero() {
                continue;
            }
            for j in (k + 1)..n {
                let u = b[(k, j)];
                b[(i, j)] = b[(i, j)] - f * u;
            }
        }
    }
    Ok(HurwitzVerdict::HurwitzByMinors)
}
