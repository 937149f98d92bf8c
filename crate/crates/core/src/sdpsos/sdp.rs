//! Dense primal-dual interior-point solver for small block SDPs.
//!
//! Primal form:
//!
//! ```text
//! minimize   <C, X> + c_fᵀ y
//! subject to A(X) + B y = b,   X = diag(X_1, ..., X_p) ⪰ 0,   y free
//! ```
//!
//! The solver works on the homogeneous self-dual embedding, so infeasible and
//! unbounded problems show up as rays instead of breaking the iteration.
//! Search directions use Nesterov-Todd scaling and a Mehrotra
//! predictor-corrector step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{sym_eigen, LinalgError, Lu};

use crate::DenseMatrix;

const STEP_FRACTION: f64 = 0.98;
const TIGHT_TOL: f64 = 1e-9;
const TIGHT_GAP: f64 = 1e-9;
const LOOSE_GAP: f64 = 1e-6;
const RAY_TOL: f64 = 1e-7;
/// Relative pivot floor of the Schur-complement Cholesky.
const SCHUR_FLOOR: f64 = 1e-14;
const REFINE_STEPS: usize = 8;
const STALL_ITERS: usize = 4;
/// Relative pivot below which a constraint row counts as dependent.
const DEPENDENT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("malformed SDP: {0}")]
    InvalidProblem(String),
}

/// One term `coef * X_block[row][col]` of a linear functional.
///
/// Only the upper triangle is addressed: `row <= col`. An off-diagonal
/// entry stands for the single matrix element, so the functional
/// `2 * X[0][1]` equals `<[[0,1],[1,0]], X>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub coef: f64,
}

/// Linear functional over block entries and free scalars.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearFunctional {
    pub entries: Vec<BlockEntry>,
    /// `(free variable index, coefficient)`
    pub free: Vec<(usize, f64)>,
}

impl LinearFunctional {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `coef * X_block[row][col]`; the indices may be given in either order.
    pub fn add_entry(&mut self, block: usize, row: usize, col: usize, coef: f64) -> &mut Self {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        self.entries.push(BlockEntry {
            block,
            row,
            col,
            coef,
        });
        self
    }

    pub fn add_free(&mut self, var: usize, coef: f64) -> &mut Self {
        self.free.push((var, coef));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.free.is_empty()
    }

    /// Value at the point `(blocks, free)`.
    pub fn eval(&self, blocks: &[DenseMatrix], free: &[f64]) -> f64 {
        let mut s = 0.0;
        for e in &self.entries {
            s += e.coef * blocks[e.block][(e.row, e.col)];
        }
        for &(v, c) in &self.free {
            s += c * free[v];
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdpConstraint {
    pub lhs: LinearFunctional,
    pub rhs: f64,
}

/// Block SDP in the primal form described in the module docs.
///
/// Serializes to JSON as `{"blocks": [dims], "free_vars": n, "constraints":
/// [{"lhs": {"entries": [{"block","row","col","coef"}], "free": [[var, coef]]},
/// "rhs": b}], "objective": {...}}`, which is the debug dump format.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub blocks: Vec<usize>,
    pub free_vars: usize,
    pub constraints: Vec<SdpConstraint>,
    pub objective: LinearFunctional,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a PSD block of dimension `dim` and returns its index.
    pub fn add_block(&mut self, dim: usize) -> usize {
        self.blocks.push(dim);
        self.blocks.len() - 1
    }

    /// Adds a free scalar and returns its index.
    pub fn add_free(&mut self) -> usize {
        self.free_vars += 1;
        self.free_vars - 1
    }

    pub fn add_constraint(&mut self, lhs: LinearFunctional, rhs: f64) {
        self.constraints.push(SdpConstraint { lhs, rhs });
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        if let Some(b) = self.blocks.iter().position(|&d| d == 0) {
            return Err(SdpError::InvalidProblem(format!(
                "block {b} has dimension 0"
            )));
        }
        let check = |f: &LinearFunctional, what: &str| -> Result<(), SdpError> {
            for e in &f.entries {
                let dim = *self.blocks.get(e.block).ok_or_else(|| {
                    SdpError::InvalidProblem(format!("{what}: block {} does not exist", e.block))
                })?;
                if e.row > e.col || e.col >= dim {
                    return Err(SdpError::InvalidProblem(format!(
                        "{what}: entry ({},{}) invalid for block {} of dimension {dim}",
                        e.row, e.col, e.block
                    )));
                }
                if !e.coef.is_finite() {
                    return Err(SdpError::InvalidProblem(format!(
                        "{what}: non-finite coefficient"
                    )));
                }
            }
            for &(v, c) in &f.free {
                if v >= self.free_vars || !c.is_finite() {
                    return Err(SdpError::InvalidProblem(format!(
                        "{what}: bad free term x{v}"
                    )));
                }
            }
            Ok(())
        };
        check(&self.objective, "objective")?;
        for (k, c) in self.constraints.iter().enumerate() {
            check(&c.lhs, &format!("constraint {k}"))?;
            if !c.rhs.is_finite() {
                return Err(SdpError::InvalidProblem(format!(
                    "constraint {k}: non-finite rhs"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("SDP problem serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SdpError> {
        let p: Self =
            serde_json::from_str(text).map_err(|e| SdpError::InvalidProblem(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Optimal,
    /// A Farkas ray proves the constraints cannot be met.
    Infeasible,
    /// The objective is unbounded below on the feasible set.
    Unbounded,
    /// Iteration limit or numerical stall without a verdict.
    MaxIter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub blocks: Vec<DenseMatrix>,
    pub free: Vec<f64>,
    /// Equality multipliers.
    pub dual: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    /// Max absolute violation of the equality constraints.
    pub residual: f64,
    /// Smallest eigenvalue over all blocks.
    pub min_eigenvalue: f64,
    pub iterations: usize,
    pub log: Vec<IterationRecord>,
}

/// Per-iteration progress of one solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub mu: f64,
    pub tau: f64,
    pub kappa: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }
}

/// Constraint data laid out for the iteration.
struct Data {
    dims: Vec<usize>,
    m: usize,
    nf: usize,
    /// Per block: `(constraint, row, col, coef)`.
    a_entries: Vec<Vec<(usize, usize, usize, f64)>>,
    /// Dense `m x nf`.
    bmat: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<DenseMatrix>,
    cf: Vec<f64>,
    /// `AA* + BBᵀ`
    g: DenseMatrix,
    /// Factored `g`, absent when the constraints are dependent.
    gram: Option<Lu<f64>>,
}

impl Data {
    fn new(prob: &SdpProblem) -> Self {
        let dims = prob.blocks.clone();
        let m = prob.constraints.len();
        let nf = prob.free_vars;
        let mut a_entries: Vec<Vec<(usize, usize, usize, f64)>> = vec![Vec::new(); dims.len()];
        let mut bmat = vec![vec![0.0; nf]; m];
        for (k, con) in prob.constraints.iter().enumerate() {
            let mut merged: std::collections::BTreeMap<(usize, usize, usize), f64> =
                Default::default();
            for e in &con.lhs.entries {
                *merged.entry((e.block, e.row, e.col)).or_insert(0.0) += e.coef;
            }
            for ((blk, r, c), v) in merged {
                if v != 0.0 {
                    a_entries[blk].push((k, r, c, v));
                }
            }
            for &(v, coef) in &con.lhs.free {
                bmat[k][v] += coef;
            }
        }
        let mut c: Vec<DenseMatrix> = dims.iter().map(|&d| DenseMatrix::zeros(d, d)).collect();
        for e in &prob.objective.entries {
            if e.row == e.col {
                c[e.block][(e.row, e.row)] += e.coef;
            } else {
                c[e.block][(e.row, e.col)] += 0.5 * e.coef;
                c[e.block][(e.col, e.row)] += 0.5 * e.coef;
            }
        }
        let mut cf = vec![0.0; nf];
        for &(v, coef) in &prob.objective.free {
            cf[v] += coef;
        }
        let mut d = Self {
            dims,
            m,
            nf,
            a_entries,
            bmat,
            b: prob.constraints.iter().map(|c| c.rhs).collect(),
            c,
            cf,
            g: DenseMatrix::zeros(0, 0),
            gram: None,
        };
        let mut g = DenseMatrix::zeros(m, m);
        let mut unit = vec![0.0; m];
        for k in 0..m {
            unit[k] = 1.0;
            let col = d.a_op(&d.a_adj(&unit));
            let bcol = d.b_op(&d.bt_op(&unit));
            unit[k] = 0.0;
            for i in 0..m {
                g[(i, k)] = col[i] + bcol[i];
            }
        }
        d.gram = Lu::factor(&g).ok();
        d.g = g;
        d
    }

    /// `A(X)`
    fn a_op(&self, x: &[DenseMatrix]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (blk, entries) in self.a_entries.iter().enumerate() {
            for &(k, r, c, v) in entries {
                out[k] += v * x[blk][(r, c)];
            }
        }
        out
    }

    /// `A*(λ)` as symmetric blocks.
    fn a_adj(&self, lam: &[f64]) -> Vec<DenseMatrix> {
        let mut out: Vec<DenseMatrix> = self
            .dims
            .iter()
            .map(|&d| DenseMatrix::zeros(d, d))
            .collect();
        for (blk, entries) in self.a_entries.iter().enumerate() {
            let o = &mut out[blk];
            for &(k, r, c, v) in entries {
                if r == c {
                    o[(r, r)] += v * lam[k];
                } else {
                    let h = 0.5 * v * lam[k];
                    o[(r, c)] += h;
                    o[(c, r)] += h;
                }
            }
        }
        out
    }

    fn b_op(&self, y: &[f64]) -> Vec<f64> {
        self.bmat.iter().map(|row| dotv(row, y)).collect()
    }

    fn bt_op(&self, lam: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nf];
        for (k, row) in self.bmat.iter().enumerate() {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v * lam[k];
            }
        }
        out
    }

    /// Schur complement `M_kl = <A_k, W A_l W>` accumulated block by block.
    fn schur(&self, w: &[DenseMatrix]) -> Vec<Vec<f64>> {
        let mut mm = vec![vec![0.0; self.m]; self.m];
        for (blk, entries) in self.a_entries.iter().enumerate() {
            let wb = &w[blk];
            for (p, &(k, a, b, va)) in entries.iter().enumerate() {
                for &(l, c, d, vc) in &entries[p..] {
                    let t = 0.5 * va * vc * (wb[(a, c)] * wb[(b, d)] + wb[(a, d)] * wb[(b, c)]);
                    mm[k][l] += t;
                    if (k, a, b) != (l, c, d) {
                        mm[l][k] += t;
                    }
                }
            }
        }
        mm
    }
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    crate::linalg::dot(a, b)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn blocks_inf_norm(v: &[DenseMatrix]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.max_abs()))
}

fn blocks_dot(a: &[DenseMatrix], b: &[DenseMatrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// Nesterov-Todd scaling of one block: `W = G Gᵀ`, `Gᵀ S G = G⁻¹ X G⁻ᵀ = diag(lambda)`.
struct Scaling {
    g: DenseMatrix,
    g_inv: DenseMatrix,
    w: DenseMatrix,
    lambda: Vec<f64>,
}

fn to_faer(a: &DenseMatrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.rows(), a.cols(), |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
}

/// Eigen-decomposition of a positive definite matrix. Jacobi is used when
/// the fast solver reports a non-positive eigenvalue.
fn eigen_pd(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix), LinalgError> {
    if let Ok(evd) = to_faer(a).self_adjoint_eigen(faer::Side::Lower) {
        let n = a.rows();
        let vals: Vec<f64> = (0..n).map(|i| evd.S()[i]).collect();
        if vals.iter().all(|&v| v > 0.0 && v.is_finite()) {
            let u = evd.U();
            return Ok((vals, DenseMatrix::from_fn(n, n, |i, j| u[(i, j)])));
        }
    }
    sym_eigen(a)
}

fn min_eigenvalue_fast(a: &DenseMatrix) -> Result<f64, LinalgError> {
    match to_faer(a).self_adjoint_eigenvalues(faer::Side::Lower) {
        Ok(v) if v.iter().all(|x| x.is_finite()) => {
            Ok(v.iter().fold(f64::INFINITY, |m, &x| m.min(x)))
        }
        _ => sym_eigen(a).map(|(v, _)| v[0]),
    }
}

fn nt_scaling(x: &DenseMatrix, s: &DenseMatrix) -> Result<Scaling, LinalgError> {
    // symmetric square root factor; tolerates much worse conditioning than Cholesky
    let (xe, xv) = eigen_pd(x)?;
    if xe.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
        return Err(LinalgError::NotPositiveSemidefinite {
            index: 0,
            pivot: xe.first().copied().unwrap_or(f64::NAN),
        });
    }
    let n = x.rows();
    let lx = xv.mul(&DenseMatrix::from_fn(n, n, |i, j| {
        if i == j {
            xe[i].sqrt()
        } else {
            0.0
        }
    }));
    let lx_inv = DenseMatrix::from_fn(n, n, |i, j| if i == j { xe[i].sqrt().recip() } else { 0.0 })
        .mul(&xv.transpose());
    let mut e = lx.transpose().mul(s).mul(&lx);
    e.symmetrize();
    let (ev, v) = eigen_pd(&e)?;
    if ev.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
        return Err(LinalgError::NotPositiveSemidefinite {
            index: 0,
            pivot: ev.first().copied().unwrap_or(f64::NAN),
        });
    }
    let lambda: Vec<f64> = ev.iter().map(|l| l.sqrt()).collect();
    let g = lx.mul(&v).mul(&DenseMatrix::from_fn(n, n, |i, j| {
        if i == j {
            lambda[i].powf(-0.5)
        } else {
            0.0
        }
    }));
    let g_inv = DenseMatrix::from_fn(n, n, |i, j| if i == j { lambda[i].sqrt() } else { 0.0 })
        .mul(&v.transpose())
        .mul(&lx_inv);
    let mut w = g.mul(&g.transpose());
    w.symmetrize();
    Ok(Scaling {
        g,
        g_inv,
        w,
        lambda,
    })
}

/// Largest `α` with `Λ + α·D ⪰ 0` for a scaled direction `D`, or infinity.
fn max_step_scaled(lambda: &[f64], d: &DenseMatrix) -> Result<f64, LinalgError> {
    let n = lambda.len();
    let mut t = DenseMatrix::from_fn(n, n, |i, j| d[(i, j)] / (lambda[i] * lambda[j]).sqrt());
    t.symmetrize();
    let lmin = min_eigenvalue_fast(&t)?;
    Ok(if lmin < 0.0 {
        -1.0 / lmin
    } else {
        f64::INFINITY
    })
}

#[derive(Clone)]
struct Iterate {
    x: Vec<DenseMatrix>,
    s: Vec<DenseMatrix>,
    y: Vec<f64>,
    lam: Vec<f64>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    dx: Vec<DenseMatrix>,
    ds: Vec<DenseMatrix>,
    dy: Vec<f64>,
    dlam: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

struct Residuals {
    r1: Vec<f64>,
    r2: Vec<DenseMatrix>,
    r3: Vec<f64>,
    r4: f64,
}

fn residuals(d: &Data, it: &Iterate) -> Residuals {
    let ax = d.a_op(&it.x);
    let by = d.b_op(&it.y);
    let r1 = (0..d.m).map(|k| ax[k] + by[k] - d.b[k] * it.tau).collect();
    let at = d.a_adj(&it.lam);
    let r2 = (0..d.dims.len())
        .map(|b| {
            let mut r = d.c[b].scale(it.tau);
            r.axpy(-1.0, &at[b]);
            r.axpy(-1.0, &it.s[b]);
            r
        })
        .collect();
    let btl = d.bt_op(&it.lam);
    let r3 = (0..d.nf).map(|v| d.cf[v] * it.tau - btl[v]).collect();
    let r4 = dotv(&d.b, &it.lam) - blocks_dot(&d.c, &it.x) - dotv(&d.cf, &it.y) - it.kappa;
    Residuals { r1, r2, r3, r4 }
}

/// Cholesky factor of the Schur complement; pivots below
/// `SCHUR_FLOOR · max diag` are raised to that floor.
struct SchurFactor {
    l: faer::Mat<f64>,
}

impl SchurFactor {
    fn factor(mm: &[Vec<f64>]) -> Result<Self, LinalgError> {
        use faer::dyn_stack::{MemBuffer, MemStack};
        use faer::linalg::cholesky::llt::factor::{
            cholesky_in_place, cholesky_in_place_scratch, LltRegularization,
        };
        let n = mm.len();
        let mut l = faer::Mat::<f64>::from_fn(n, n, |i, j| mm[i][j]);
        let maxdiag = (0..n).fold(0.0f64, |m, i| m.max(mm[i][i].abs()));
        let floor = (SCHUR_FLOOR * maxdiag).max(f64::MIN_POSITIVE);
        let reg = LltRegularization {
            dynamic_regularization_delta: floor,
            dynamic_regularization_epsilon: floor,
        };
        let par = faer::Par::Seq;
        let mut buf = MemBuffer::new(cholesky_in_place_scratch::<f64>(n, par, Default::default()));
        cholesky_in_place(
            l.as_mut(),
            reg,
            par,
            MemStack::new(&mut buf),
            Default::default(),
        )
        .map_err(|_| LinalgError::SingularMatrix)?;
        if !(0..n).all(|i| l[(i, i)].is_finite()) {
            return Err(LinalgError::SingularMatrix);
        }
        Ok(Self { l })
    }

    fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        use faer::linalg::triangular_solve::{
            solve_lower_triangular_in_place, solve_upper_triangular_in_place,
        };
        let n = b.len();
        let mut x = faer::Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
        solve_lower_triangular_in_place(self.l.as_ref(), x.as_mut(), faer::Par::Seq);
        solve_upper_triangular_in_place(self.l.as_ref().transpose(), x.as_mut(), faer::Par::Seq);
        let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(LinalgError::SingularMatrix)
        }
    }
}

/// Reduced Newton system in `(Δλ, Δy, Δτ)` for a fixed scaling.
/// Newton matrix `K = [M E; F G]` with the Schur block `M` factored by
/// regularized Cholesky and the small border eliminated explicitly.
struct Kkt {
    k: DenseMatrix,
    m: usize,
    chol: SchurFactor,
    /// `M⁻¹E`, one column per border unknown.
    z: Vec<Vec<f64>>,
    /// `G − F M⁻¹ E`.
    border: Lu<f64>,
}

impl Kkt {
    fn base_solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let m = self.m;
        let nb = self.z.len();
        let z1 = self.chol.solve(&rhs[..m])?;
        let t: Vec<f64> = (0..nb)
            .map(|r| rhs[m + r] - dotv(&self.k.row(m + r)[..m], &z1))
            .collect();
        let w = self.border.solve(&t)?;
        let mut out = z1;
        for (c, wc) in w.iter().enumerate() {
            for (o, zc) in out.iter_mut().zip(&self.z[c]) {
                *o -= wc * zc;
            }
        }
        out.extend_from_slice(&w);
        Ok(out)
    }

    /// Block solve followed by iterative refinement against the exact `K`.
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let mut x = self.base_solve(rhs)?;
        let mut last = f64::INFINITY;
        for _ in 0..REFINE_STEPS {
            let kx = self.k.matvec(&x)?;
            let r: Vec<f64> = rhs.iter().zip(&kx).map(|(a, b)| a - b).collect();
            let rn = inf_norm(&r);
            if !(rn < 0.5 * last) {
                break;
            }
            last = rn;
            let dx = self.base_solve(&r)?;
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        Ok(x)
    }
}

fn build_kkt(d: &Data, sc: &[Scaling], it: &Iterate) -> Result<Kkt, LinalgError> {
    let m = d.m;
    let nf = d.nf;
    let n = m + nf + 1;
    let w: Vec<DenseMatrix> = sc.iter().map(|s| s.w.clone()).collect();
    let wcw: Vec<DenseMatrix> = w.iter().zip(&d.c).map(|(w, c)| w.mul(c).mul(w)).collect();
    let awcw = d.a_op(&wcw);
    let cwcw = blocks_dot(&d.c, &wcw);
    let mm = d.schur(&w);
    let mut k = DenseMatrix::zeros(n, n);
    for i in 0..m {
        for j in 0..m {
            k[(i, j)] = mm[i][j];
        }
        for v in 0..nf {
            k[(i, m + v)] = d.bmat[i][v];
            k[(m + v, i)] = -d.bmat[i][v];
        }
        k[(i, n - 1)] = -(d.b[i] + awcw[i]);
        k[(n - 1, i)] = d.b[i] - awcw[i];
    }
    for v in 0..nf {
        k[(m + v, n - 1)] = d.cf[v];
        k[(n - 1, m + v)] = -d.cf[v];
    }
    k[(n - 1, n - 1)] = cwcw + it.kappa / it.tau;
    let chol = SchurFactor::factor(&mm)?;
    let nb = nf + 1;
    let mut z = Vec::with_capacity(nb);
    for c in 0..nb {
        let col: Vec<f64> = (0..m).map(|i| k[(i, m + c)]).collect();
        z.push(chol.solve(&col)?);
    }
    let g = DenseMatrix::from_fn(nb, nb, |r, c| {
        k[(m + r, m + c)] - dotv(&k.row(m + r)[..m], &z[c])
    });
    Ok(Kkt {
        border: Lu::factor_static(&g)?,
        k,
        m,
        chol,
        z,
    })
}

/// Solves the Newton system for complementarity targets `rc` (per block,
/// already in `ΔX + W ΔS W = rc` form) and `rk` (`κΔτ + τΔκ = rk`), with the
/// linear residuals reduced by the factor `eta`.
#[allow(clippy::too_many_arguments)]
fn solve_direction(
    d: &Data,
    sc: &[Scaling],
    kkt: &Kkt,
    it: &Iterate,
    res: &Residuals,
    rc: &[DenseMatrix],
    rk: f64,
    eta: f64,
) -> Result<Direction, LinalgError> {
    let m = d.m;
    let nf = d.nf;
    let wr2w: Vec<DenseMatrix> = sc
        .iter()
        .zip(&res.r2)
        .map(|(s, r)| s.w.mul(r).mul(&s.w))
        .collect();
    let a_rc = d.a_op(rc);
    let a_wr2w = d.a_op(&wr2w);
    let mut rhs = vec![0.0; m + nf + 1];
    for i in 0..m {
        rhs[i] = -eta * res.r1[i] - a_rc[i] + eta * a_wr2w[i];
    }
    for v in 0..nf {
        rhs[m + v] = -eta * res.r3[v];
    }
    rhs[m + nf] =
        -eta * res.r4 + blocks_dot(&d.c, rc) - eta * blocks_dot(&d.c, &wr2w) + rk / it.tau;
    let sol = kkt.solve(&rhs)?;
    let dlam = sol[..m].to_vec();
    let dy = sol[m..m + nf].to_vec();
    let dtau = sol[m + nf];
    let at = d.a_adj(&dlam);
    let mut ds = Vec::with_capacity(sc.len());
    let mut dx = Vec::with_capacity(sc.len());
    for b in 0..sc.len() {
        let mut s = d.c[b].scale(dtau);
        s.axpy(-1.0, &at[b]);
        s.axpy(eta, &res.r2[b]);
        s.symmetrize();
        let mut x = rc[b].sub(&sc[b].w.mul(&s).mul(&sc[b].w));
        x.symmetrize();
        ds.push(s);
        dx.push(x);
    }
    let mut dy = dy;
    if let Some(g) = &d.gram {
        // put back what the ill-conditioned solve lost from A(ΔX) + BΔy = bΔτ − ηr₁
        let ax = d.a_op(&dx);
        let by = d.b_op(&dy);
        let e: Vec<f64> = (0..m)
            .map(|i| d.b[i] * dtau - eta * res.r1[i] - ax[i] - by[i])
            .collect();
        let z = g.solve(&e)?;
        for (x, a) in dx.iter_mut().zip(d.a_adj(&z)) {
            x.axpy(1.0, &a);
        }
        for (y, b) in dy.iter_mut().zip(d.bt_op(&z)) {
            *y += b;
        }
    }
    let dkappa = (rk - it.kappa * dtau) / it.tau;
    Ok(Direction {
        dx,
        ds,
        dy,
        dlam,
        dtau,
        dkappa,
    })
}

/// Scaled directions `G⁻¹ΔX G⁻ᵀ` and `GᵀΔS G` per block.
fn scaled_dirs(sc: &[Scaling], dir: &Direction) -> (Vec<DenseMatrix>, Vec<DenseMatrix>) {
    let mut tx = Vec::with_capacity(sc.len());
    let mut ts = Vec::with_capacity(sc.len());
    for (b, s) in sc.iter().enumerate() {
        let mut x = s.g_inv.mul(&dir.dx[b]).mul(&s.g_inv.transpose());
        x.symmetrize();
        let mut z = s.g.transpose().mul(&dir.ds[b]).mul(&s.g);
        z.symmetrize();
        tx.push(x);
        ts.push(z);
    }
    (tx, ts)
}

fn max_step(sc: &[Scaling], it: &Iterate, dir: &Direction) -> Result<f64, LinalgError> {
    let (tx, ts) = scaled_dirs(sc, dir);
    let mut a = f64::INFINITY;
    for (b, s) in sc.iter().enumerate() {
        a = a.min(max_step_scaled(&s.lambda, &tx[b])?);
        a = a.min(max_step_scaled(&s.lambda, &ts[b])?);
    }
    if dir.dtau < 0.0 {
        a = a.min(-it.tau / dir.dtau);
    }
    if dir.dkappa < 0.0 {
        a = a.min(-it.kappa / dir.dkappa);
    }
    Ok(a)
}

fn take_step(it: &Iterate, dir: &Direction, alpha: f64) -> Iterate {
    let step = |v: &[DenseMatrix], dv: &[DenseMatrix]| -> Vec<DenseMatrix> {
        v.iter()
            .zip(dv)
            .map(|(a, b)| {
                let mut r = a.clone();
                r.axpy(alpha, b);
                r.symmetrize();
                r
            })
            .collect()
    };
    Iterate {
        x: step(&it.x, &dir.dx),
        s: step(&it.s, &dir.ds),
        y: it
            .y
            .iter()
            .zip(&dir.dy)
            .map(|(a, b)| a + alpha * b)
            .collect(),
        lam: it
            .lam
            .iter()
            .zip(&dir.dlam)
            .map(|(a, b)| a + alpha * b)
            .collect(),
        tau: it.tau + alpha * dir.dtau,
        kappa: it.kappa + alpha * dir.dkappa,
    }
}

fn complementarity(it: &Iterate, n_cone: f64) -> f64 {
    (blocks_dot(&it.x, &it.s) + it.tau * it.kappa) / n_cone
}

struct Measures {
    pres: f64,
    dres: f64,
    gap: f64,
}

fn measures(d: &Data, it: &Iterate, res: &Residuals) -> Measures {
    let pres = inf_norm(&res.r1) / it.tau;
    let dres = blocks_inf_norm(&res.r2).max(inf_norm(&res.r3)) / it.tau;
    let pobj = (blocks_dot(&d.c, &it.x) + dotv(&d.cf, &it.y)) / it.tau;
    let dobj = dotv(&d.b, &it.lam) / it.tau;
    let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
    Measures { pres, dres, gap }
}

/// Primal infeasibility ray: `bᵀλ > 0` with `A*λ ⪯ 0`, `Bᵀλ = 0`.
fn is_primal_infeasible(d: &Data, it: &Iterate) -> bool {
    let bl = dotv(&d.b, &it.lam);
    if bl <= 0.0 {
        return false;
    }
    let at = d.a_adj(&it.lam);
    let mut dev = 0.0f64;
    for (a, s) in at.iter().zip(&it.s) {
        dev = dev.max(a.add(s).max_abs());
    }
    dev = dev.max(inf_norm(&d.bt_op(&it.lam)));
    dev / bl <= RAY_TOL
}

/// Dual infeasibility ray: `<C,X> + c_fᵀy < 0` with `A(X) + By = 0`.
fn is_dual_infeasible(d: &Data, it: &Iterate) -> bool {
    let obj = blocks_dot(&d.c, &it.x) + dotv(&d.cf, &it.y);
    if obj >= 0.0 {
        return false;
    }
    let ax = d.a_op(&it.x);
    let by = d.b_op(&it.y);
    let dev = ax
        .iter()
        .zip(&by)
        .fold(0.0f64, |m, (a, b)| m.max((a + b).abs()));
    dev / (-obj) <= RAY_TOL
}

/// Rows of the constraint Gram matrix kept by a diagonally pivoted
/// Cholesky factorization, in ascending order.
fn independent_rows(g: &DenseMatrix) -> Vec<usize> {
    let m = g.rows();
    let mut a = g.clone();
    let mut rest: Vec<usize> = (0..m).collect();
    let mut kept = Vec::new();
    let top = (0..m).map(|i| g[(i, i)]).fold(0.0f64, f64::max);
    while let Some((pos, &p)) = rest
        .iter()
        .enumerate()
        .max_by(|x, y| a[(*x.1, *x.1)].total_cmp(&a[(*y.1, *y.1)]))
    {
        let piv = a[(p, p)];
        if !(piv > DEPENDENT_TOL * top) {
            break;
        }
        rest.swap_remove(pos);
        for &i in &rest {
            let f = a[(i, p)] / piv;
            for &j in &rest {
                a[(i, j)] -= f * a[(p, j)];
            }
        }
        kept.push(p);
    }
    kept.sort_unstable();
    kept
}

/// Drops linearly dependent constraints. Inconsistent ones are answered
/// with the Farkas combination that exposes them.
fn solve_presolved(
    prob: &SdpProblem,
    d: &Data,
    kept: &[usize],
    feas_tol: f64,
    max_iter: usize,
) -> Result<SdpSolution, SdpError> {
    let sub = DenseMatrix::from_fn(kept.len(), kept.len(), |i, j| d.g[(kept[i], kept[j])]);
    let Ok(lu) = Lu::factor(&sub) else {
        return solve_independent(prob, feas_tol, max_iter);
    };
    let bnorm = inf_norm(&d.b);
    for k in (0..d.m).filter(|k| kept.binary_search(k).is_err()) {
        let rhs: Vec<f64> = kept.iter().map(|&j| d.g[(j, k)]).collect();
        let Ok(c) = lu.solve(&rhs) else {
            return solve_independent(prob, feas_tol, max_iter);
        };
        let implied: f64 = c.iter().zip(kept).map(|(c, &j)| c * d.b[j]).sum();
        if (d.b[k] - implied).abs() > feas_tol * (1.0 + bnorm) {
            let mut dual = vec![0.0; d.m];
            dual[k] = 1.0;
            for (c, &j) in c.iter().zip(kept) {
                dual[j] = -c;
            }
            let blocks: Vec<DenseMatrix> =
                d.dims.iter().map(|&n| DenseMatrix::zeros(n, n)).collect();
            return Ok(SdpSolution {
                status: SdpStatus::Infeasible,
                objective: 0.0,
                dual_objective: dotv(&d.b, &dual),
                blocks,
                free: vec![0.0; d.nf],
                dual,
                residual: bnorm,
                min_eigenvalue: 0.0,
                iterations: 0,
                log: Vec::new(),
            });
        }
    }
    let mut reduced = prob.clone();
    reduced.constraints = kept.iter().map(|&k| prob.constraints[k].clone()).collect();
    let mut sol = solve_independent(&reduced, feas_tol, max_iter)?;
    let mut dual = vec![0.0; d.m];
    for (v, &k) in sol.dual.iter().zip(kept) {
        dual[k] = *v;
    }
    sol.dual = dual;
    if sol.status == SdpStatus::Optimal || sol.status == SdpStatus::MaxIter {
        let ax = d.a_op(&sol.blocks);
        let by = d.b_op(&sol.free);
        sol.residual = (0..d.m).fold(0.0f64, |m, k| m.max((ax[k] + by[k] - d.b[k]).abs()));
    }
    Ok(sol)
}

/// Solves a block SDP.
///
/// `feas_tol` bounds the absolute equality residual of an `Optimal` answer.
/// Linearly dependent constraints are allowed.
pub fn solve_sdp(
    prob: &SdpProblem,
    feas_tol: f64,
    max_iter: usize,
) -> Result<SdpSolution, SdpError> {
    prob.validate()?;
    let d = Data::new(prob);
    if d.m > 0 {
        let kept = independent_rows(&d.g);
        if kept.len() < d.m {
            return solve_presolved(prob, &d, &kept, feas_tol, max_iter);
        }
    }
    solve_with(d, feas_tol, max_iter)
}

fn solve_independent(
    prob: &SdpProblem,
    feas_tol: f64,
    max_iter: usize,
) -> Result<SdpSolution, SdpError> {
    solve_with(Data::new(prob), feas_tol, max_iter)
}

fn solve_with(d: Data, feas_tol: f64, max_iter: usize) -> Result<SdpSolution, SdpError> {
    let n_cone = d.dims.iter().sum::<usize>() as f64 + 1.0;
    let bnorm = inf_norm(&d.b);
    let cnorm = blocks_inf_norm(&d.c).max(inf_norm(&d.cf));

    let mut it = Iterate {
        x: d.dims.iter().map(|&n| DenseMatrix::identity(n)).collect(),
        s: d.dims.iter().map(|&n| DenseMatrix::identity(n)).collect(),
        y: vec![0.0; d.nf],
        lam: vec![0.0; d.m],
        tau: 1.0,
        kappa: 1.0,
    };
    let mut status = None;
    let mut iterations = 0;
    let loose_ok = |me: &Measures| {
        me.pres <= feas_tol && me.dres <= feas_tol * (1.0 + cnorm) && me.gap <= LOOSE_GAP
    };
    let merit = |me: &Measures| {
        (me.pres / (1.0 + bnorm))
            .max(me.dres / (1.0 + cnorm))
            .max(me.gap)
    };
    // best acceptable iterate seen so far, with its merit
    let mut best: Option<(f64, Iterate)> = None;
    let mut since_best = 0;
    let mut log = Vec::new();

    while iterations < max_iter {
        let res = residuals(&d, &it);
        let me = measures(&d, &it, &res);
        if me.pres <= (TIGHT_TOL * (1.0 + bnorm)).min(feas_tol)
            && me.dres <= TIGHT_TOL * (1.0 + cnorm)
            && me.gap <= TIGHT_GAP
        {
            status = Some(SdpStatus::Optimal);
            break;
        }
        if is_primal_infeasible(&d, &it) {
            status = Some(SdpStatus::Infeasible);
            break;
        }
        if is_dual_infeasible(&d, &it) {
            status = Some(SdpStatus::Unbounded);
            break;
        }
        if loose_ok(&me) {
            let mm = merit(&me);
            if best.as_ref().is_none_or(|(b, _)| mm < *b) {
                best = Some((mm, it.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= STALL_ITERS {
                    break;
                }
            }
        }
        iterations += 1;
        log.push(IterationRecord {
            mu: complementarity(&it, n_cone),
            tau: it.tau,
            kappa: it.kappa,
            primal_residual: me.pres,
            dual_residual: me.dres,
            gap: me.gap,
        });
        let Some(next) = iterate(&d, &it, &res, n_cone) else {
            break;
        };
        it = next;
    }

    let status = match status {
        Some(s) => s,
        None => {
            if let Some((_, b)) = best.take() {
                it = b;
                SdpStatus::Optimal
            } else if is_primal_infeasible(&d, &it) {
                SdpStatus::Infeasible
            } else if is_dual_infeasible(&d, &it) {
                SdpStatus::Unbounded
            } else {
                SdpStatus::MaxIter
            }
        }
    };
    Ok(finish(&d, &it, status, iterations, log))
}

/// One predictor-corrector iteration; `None` on numerical breakdown or stall.
fn iterate(d: &Data, it: &Iterate, res: &Residuals, n_cone: f64) -> Option<Iterate> {
    let mu = complementarity(it, n_cone);
    let sc: Vec<Scaling> =
        it.x.iter()
            .zip(&it.s)
            .map(|(x, s)| nt_scaling(x, s))
            .collect::<Result<_, _>>()
            .ok()?;
    let kkt = build_kkt(d, &sc, it).ok()?;

    // predictor
    let rc_aff: Vec<DenseMatrix> = it.x.iter().map(|x| x.scale(-1.0)).collect();
    let aff = solve_direction(d, &sc, &kkt, it, res, &rc_aff, -it.tau * it.kappa, 1.0).ok()?;
    let alpha_aff = max_step(&sc, it, &aff).ok()?.min(1.0);
    let mu_aff = complementarity(&take_step(it, &aff, alpha_aff), n_cone);
    let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

    // corrector
    let (tx, ts) = scaled_dirs(&sc, &aff);
    let mut rc = Vec::with_capacity(sc.len());
    for (b, s) in sc.iter().enumerate() {
        let n = s.lambda.len();
        let mut prod = tx[b].mul(&ts[b]);
        let pt = prod.transpose();
        prod = prod.add(&pt).scale(0.5);
        let u = DenseMatrix::from_fn(n, n, |i, j| {
            let mut r = -prod[(i, j)];
            if i == j {
                r += sigma * mu - s.lambda[i] * s.lambda[i];
            }
            2.0 * r / (s.lambda[i] + s.lambda[j])
        });
        let mut r = s.g.mul(&u).mul(&s.g.transpose());
        r.symmetrize();
        rc.push(r);
    }
    let rk = sigma * mu - it.tau * it.kappa - aff.dtau * aff.dkappa;
    let dir = solve_direction(d, &sc, &kkt, it, res, &rc, rk, 1.0 - sigma).ok()?;
    let alpha = (STEP_FRACTION * max_step(&sc, it, &dir).ok()?).min(1.0);
    if !(alpha > 1e-10) {
        return None;
    }
    let next = take_step(it, &dir, alpha);
    if !(next.tau > 0.0 && next.kappa >= 0.0) {
        return None;
    }
    Some(next)
}

fn finish(
    d: &Data,
    it: &Iterate,
    status: SdpStatus,
    iterations: usize,
    log: Vec<IterationRecord>,
) -> SdpSolution {
    // rays are reported unnormalized; everything else is divided by τ
    let scale = if status == SdpStatus::Optimal || status == SdpStatus::MaxIter {
        1.0 / it.tau
    } else {
        1.0
    };
    let blocks: Vec<DenseMatrix> = it.x.iter().map(|x| x.scale(scale)).collect();
    let free: Vec<f64> = it.y.iter().map(|v| v * scale).collect();
    let dual: Vec<f64> = it.lam.iter().map(|v| v * scale).collect();
    let ax = d.a_op(&blocks);
    let by = d.b_op(&free);
    let residual = (0..d.m).fold(0.0f64, |m, k| m.max((ax[k] + by[k] - d.b[k]).abs()));
    let min_eigenvalue = blocks
        .iter()
        .map(|b| sym_eigen(b).map(|(v, _)| v[0]).unwrap_or(f64::NAN))
        .fold(f64::INFINITY, f64::min);
    SdpSolution {
        status,
        objective: blocks_dot(&d.c, &blocks) + dotv(&d.cf, &free),
        dual_objective: dotv(&d.b, &dual),
        blocks,
        free,
        dual,
        residual,
        min_eigenvalue,
        iterations,
        log,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_two_by_two() {
        // minimize x s.t. [[x,1],[1,x]] ⪰ 0
        let mut p = SdpProblem::new();
        let b = p.add_block(2);
        let mut off = LinearFunctional::new();
        off.add_entry(b, 0, 1, 1.0);
        p.add_constraint(off, 1.0);
        let mut eq = LinearFunctional::new();
        eq.add_entry(b, 0, 0, 1.0).add_entry(b, 1, 1, -1.0);
        p.add_constraint(eq, 0.0);
        p.objective.add_entry(b, 0, 0, 1.0);
        let sol = solve_sdp(&p, 1e-7, 200).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-6, "{}", sol.objective);
        assert!(sol.residual <= 1e-7);
    }

    #[test]
    fn redundant_constraints() {
        // X00 = 2, X11 = 3, X00 + X11 = 5, 2·X00 = 4
        let mut p = SdpProblem::new();
        let b = p.add_block(2);
        for (terms, rhs) in [
            (vec![(0, 0, 1.0)], 2.0),
            (vec![(1, 1, 1.0)], 3.0),
            (vec![(0, 0, 1.0), (1, 1, 1.0)], 5.0),
            (vec![(0, 0, 2.0)], 4.0),
        ] {
            let mut f = LinearFunctional::new();
            for (r, c, v) in terms {
                f.add_entry(b, r, c, v);
            }
            p.add_constraint(f, rhs);
        }
        p.objective.add_entry(b, 0, 1, 1.0);
        let sol = solve_sdp(&p, 1e-7, 200).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!(sol.residual <= 1e-7);
        assert_eq!(sol.dual.len(), 4);
        // min X01 with X00 = 2, X11 = 3 is −√6
        assert!(
            (sol.objective + 6f64.sqrt()).abs() < 1e-6,
            "{}",
            sol.objective
        );

        p.constraints[3].rhs = 5.0;
        let sol = solve_sdp(&p, 1e-7, 200).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
        // Farkas: A*(y) = 0 with bᵀy ≠ 0
        let d = Data::new(&p);
        let at = d.a_adj(&sol.dual);
        assert!(blocks_inf_norm(&at) < 1e-9);
        assert!(sol.dual_objective.abs() > 1e-6);
    }

    #[test]
    fn negative_scalar_is_infeasible() {
        let mut p = SdpProblem::new();
        let b = p.add_block(1);
        let mut f = LinearFunctional::new();
        f.add_entry(b, 0, 0, 1.0);
        p.add_constraint(f, -1.0);
        let sol = solve_sdp(&p, 1e-7, 200).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn free_variable_lp() {
        // minimize y s.t. y - X = 2, X ⪰ 0  ->  y = 2
        let mut p = SdpProblem::new();
        let b = p.add_block(1);
        let y = p.add_free();
        let mut f = LinearFunctional::new();
        f.add_free(y, 1.0).add_entry(b, 0, 0, -1.0);
        p.add_constraint(f, 2.0);
        p.objective.add_free(y, 1.0);
        let sol = solve_sdp(&p, 1e-7, 200).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.free[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn unbounded_detected() {
        // minimize -X s.t. nothing binding X
        let mut p = SdpProblem::new();
        let b = p.add_block(2);
        let mut f = LinearFunctional::new();
        f.add_entry(b, 0, 1, 1.0);
        p.add_constraint(f, 0.0);
        p.objective.add_entry(b, 0, 0, -1.0);
        let sol = solve_sdp(&p, 1e-7, 200).unwrap();
        assert_eq!(sol.status, SdpStatus::Unbounded);
    }

    #[test]
    fn json_roundtrip() {
        let mut p = SdpProblem::new();
        let b = p.add_block(2);
        let mut f = LinearFunctional::new();
        f.add_entry(b, 1, 0, 2.0);
        p.add_constraint(f, 1.0);
        let text = p.to_json();
        assert_eq!(SdpProblem::from_json(&text).unwrap(), p);
    }

    #[test]
    fn rejects_bad_entries() {
        let mut p = SdpProblem::new();
        p.add_block(2);
        let mut f = LinearFunctional::new();
        f.add_entry(0, 0, 2, 1.0);
        p.add_constraint(f, 0.0);
        assert!(matches!(
            solve_sdp(&p, 1e-7, 10),
            Err(SdpError::InvalidProblem(_))
        ));
    }
}
