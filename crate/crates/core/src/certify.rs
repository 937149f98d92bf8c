//! Lyapunov certificates, comparison matrices and power-flow bounds.
//!
//! Every subsystem gets a quadratic `V_i = x_iᵀ P x_i` from the Lyapunov
//! equation of its linearization, rescaled so that `{V_i ≤ 1}` is a
//! certified region of attraction. Rows of the comparison matrix and
//! per-edge flow bounds are then found by SOS programs over the domain
//! `D = {V_j ≤ γ_j}`.

use std::ops::Range;

use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::linalg::{metzler_hurwitz, solve_linear, sym_eigen, HurwitzVerdict, LinalgError};
use crate::netmodel::NetworkModel;
use crate::polyalg::PolyError;
use crate::sdpsos::{
    gram_polynomial, prove_sos, solve_sos_program, GramCertificate, Sign, SosError, SosProgram,
};
use crate::{DenseMatrix, Monomial, Polynomial};

/// Strict-negativity margin `ε|x|²` in the region-of-attraction program.
pub const ROA_MARGIN: f64 = 1e-6;
/// Upper end of the level search for globally certifiable subsystems.
pub const GAMMA_CAP: f64 = 10.0;
/// Smallest level tried before giving up.
pub const GAMMA_FLOOR: f64 = 1e-4;
/// Relative resolution of the level bisection.
pub const GAMMA_RESOLUTION: f64 = 1e-2;
/// Default domain level `γ_i` for every node.
pub const DEFAULT_GAMMA: f64 = 0.6;
/// Smallest eigenvalue accepted for `P`.
pub const MIN_P_EIGENVALUE: f64 = 1e-8;
/// Slack added to solver optima before independent re-verification.
pub const BACKOFF: [f64; 3] = [1e-6, 1e-5, 5e-5];
/// Relative inflations of the solved multipliers tried during
/// re-verification of a level certificate.
pub const INFLATE: [f64; 4] = [0.0, 1e-6, 1e-4, 1e-2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("linearization of subsystem {subsystem} is not asymptotically stable")]
    LinearizationNotStable { subsystem: usize },
    #[error("no level of subsystem {subsystem} could be certified down to {floor:e}")]
    NoCertifiableLevel { subsystem: usize, floor: f64 },
    #[error("comparison row {row} is infeasible on the requested domain")]
    RowInfeasible { row: usize },
    #[error("flow along edge {target} <- {neighbor} cannot be bounded on the requested domain")]
    FlowInfeasible { target: usize, neighbor: usize },
    #[error("{context}: {reason}")]
    NotProven { context: String, reason: String },
    #[error("invalid domain level: {0}")]
    InvalidGamma(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Quadratic Lyapunov function of one subsystem.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovCertificate {
    pub subsystem: usize,
    /// Global indices of the subsystem's variables.
    pub vars: Range<usize>,
    /// Solution of `AᵀP + PA = -I`, before scaling.
    pub p: DenseMatrix,
    /// Certified level of the unscaled function; `None` until scaled.
    pub gamma_max: Option<f64>,
    /// `x_iᵀ P x_i`, divided by `gamma_max` once scaled.
    pub v: Polynomial,
    /// Negativity certificate at `gamma_max`, with its multiplier.
    pub roa: Option<(GramCertificate, GramCertificate)>,
}

impl LyapunovCertificate {
    /// Matrix `M` with `V = x_iᵀ M x_i`.
    pub fn form(&self) -> DenseMatrix {
        self.p.scale(1.0 / self.gamma_max.unwrap_or(1.0))
    }

    /// `V` at the subsystem-local state `xi`.
    pub fn eval_local(&self, xi: &[f64]) -> f64 {
        let m = self.form();
        let mut s = 0.0;
        for a in 0..xi.len() {
            for b in 0..xi.len() {
                s += xi[a] * m[(a, b)] * xi[b];
            }
        }
        s
    }

    /// `V` at a full network state.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_local(&x[self.vars.clone()])
    }
}

impl Serialize for LyapunovCertificate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("LyapunovCertificate", 6)?;
        st.serialize_field("subsystem", &self.subsystem)?;
        st.serialize_field("p", &self.p.to_rows())?;
        st.serialize_field("gamma_max", &self.gamma_max)?;
        st.serialize_field("v", &self.v.to_string())?;
        st.serialize_field("region", "V <= 1")?;
        st.serialize_field("roa_certificate", &self.roa.as_ref().map(|r| &r.0))?;
        st.serialize_field("roa_multiplier", &self.roa.as_ref().map(|r| &r.1))?;
        st.end()
    }
}

/// One solved row of the comparison matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CmRow {
    pub node: usize,
    /// Dense row `a_i·`; zero outside `N_i`.
    pub a: Vec<f64>,
    /// `σ_ij` for each neighbor `j`, in neighbor order.
    pub multipliers: Vec<(usize, GramCertificate)>,
    /// Certificate of the full row constraint.
    pub certificate: Option<GramCertificate>,
    pub backoff: f64,
}

impl CmRow {
    /// A row without SOS evidence.
    pub fn from_coefficients(node: usize, a: Vec<f64>) -> Self {
        Self {
            node,
            a,
            multipliers: Vec::new(),
            certificate: None,
            backoff: 0.0,
        }
    }

    pub fn sum(&self) -> f64 {
        self.a.iter().sum()
    }
}

impl Serialize for CmRow {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("CmRow", 5)?;
        st.serialize_field("node", &self.node)?;
        st.serialize_field("a", &self.a)?;
        st.serialize_field("backoff", &self.backoff)?;
        let sig: Vec<_> = self
            .multipliers
            .iter()
            .map(|(j, g)| serde_json::json!({ "neighbor": j, "sigma": g }))
            .collect();
        st.serialize_field("multipliers", &sig)?;
        st.serialize_field("certificate", &self.certificate)?;
        st.end()
    }
}

/// Metzler comparison matrix with its domain and evidence.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonCertificate {
    pub a: DenseMatrix,
    pub gamma: Vec<f64>,
    pub rows: Vec<CmRow>,
    pub hurwitz: HurwitzVerdict,
}

impl Serialize for ComparisonCertificate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("ComparisonCertificate", 4)?;
        st.serialize_field("a", &self.a.to_rows())?;
        st.serialize_field("gamma", &self.gamma)?;
        st.serialize_field("hurwitz", &self.hurwitz)?;
        st.serialize_field("rows", &self.rows)?;
        st.end()
    }
}

/// `|φ_ij| ≤ uᵀv` on the domain, for edge `target ← source`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowBound {
    pub target: usize,
    pub source: usize,
    /// Nonnegative weights over all nodes; zero outside `{target, source}`.
    pub u: Vec<f64>,
    /// `φ_ij = ∇V_iᵀ g_ij`.
    pub phi: Polynomial,
    /// Certificates for `uᵀv - φ` and `uᵀv + φ` (absent when `φ = 0`).
    pub evidence: Option<[GramCertificate; 2]>,
}

impl Serialize for FlowBound {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("FlowBound", 5)?;
        st.serialize_field("target", &self.target)?;
        st.serialize_field("source", &self.source)?;
        st.serialize_field("u", &self.u)?;
        st.serialize_field("phi", &self.phi.to_string())?;
        st.serialize_field("evidence", &self.evidence)?;
        st.end()
    }
}

fn var(n: usize, v: usize) -> Polynomial {
    Polynomial::var(n, v).expect("variable in range")
}

/// `xᵀ M x` over the variables `vars`.
pub fn quadratic_form(nvars: usize, vars: Range<usize>, m: &DenseMatrix) -> Polynomial {
    let idx: Vec<usize> = vars.collect();
    let mut terms = Vec::new();
    for (a, &va) in idx.iter().enumerate() {
        for (b, &vb) in idx.iter().enumerate() {
            terms.push((Monomial::var(va).mul(&Monomial::var(vb)), m[(a, b)]));
        }
    }
    Polynomial::from_terms(nvars, terms).expect("variables in range")
}

/// `∇Vᵀ field`, where `field[k]` is the rate of variable `vars.start + k`.
pub fn lie_derivative(v: &Polynomial, vars: Range<usize>, field: &[Polynomial]) -> Polynomial {
    let mut out = Polynomial::zero(v.nvars());
    for (g, f) in vars.zip(field) {
        out = &out + &(&v.derivative(g) * f);
    }
    out
}

fn sum_squares(nvars: usize, vars: impl IntoIterator<Item = usize>) -> Polynomial {
    let mut out = Polynomial::zero(nvars);
    for v in vars {
        let x = var(nvars, v);
        out = &out + &(&x * &x);
    }
    out
}

fn even_up(d: u32) -> u32 {
    d + d % 2
}

/// Jacobian at the origin of subsystem `i`'s isolated dynamics.
pub fn linearization(model: &NetworkModel, i: usize) -> DenseMatrix {
    let vars = model.vars(i);
    let f = &model.subsystem(i).f;
    DenseMatrix::from_fn(f.len(), f.len(), |a, b| {
        f[a].coeff(&Monomial::var(vars.start + b))
    })
}

/// Solves `AᵀP + PA = -I` through its Kronecker form.
pub fn lyapunov_equation(a: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    let d = a.rows();
    let idx = |r: usize, c: usize| r * d + c;
    let mut k = DenseMatrix::zeros(d * d, d * d);
    let mut rhs = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..d {
            let row = idx(r, c);
            for q in 0..d {
                k[(row, idx(q, c))] += a[(q, r)];
                k[(row, idx(r, q))] += a[(q, c)];
            }
            if r == c {
                rhs[row] = -1.0;
            }
        }
    }
    let sol = solve_linear(&k, &rhs)?;
    let mut p = DenseMatrix::from_vec(d, d, sol)?;
    p.symmetrize();
    Ok(p)
}

/// Unscaled quadratic Lyapunov function of subsystem `i`.
pub fn isolated_lf(model: &NetworkModel, i: usize) -> Result<LyapunovCertificate, CertifyError> {
    let unstable = CertifyError::LinearizationNotStable { subsystem: i };
    let a = linearization(model, i);
    let d = a.rows();
    let metzler = (0..d).all(|r| (0..d).all(|c| r == c || a[(r, c)] >= 0.0));
    if metzler && !metzler_hurwitz(&a)?.is_hurwitz() {
        return Err(unstable);
    }
    let p = lyapunov_equation(&a).map_err(|_| unstable.clone())?;
    let (eig, _) = sym_eigen(&p)?;
    if eig[0] < MIN_P_EIGENVALUE || !eig.iter().all(|e| e.is_finite()) {
        return Err(unstable);
    }
    let vars = model.vars(i);
    Ok(LyapunovCertificate {
        subsystem: i,
        v: quadratic_form(model.n(), vars.clone(), &p),
        vars,
        p,
        gamma_max: None,
        roa: None,
    })
}

/// Certificate that `V̇ < 0` on `{V ≤ γ} \ {0}`, if one is found.
///
/// Maximizes `t` subject to `-V̇ - σ(γ - V) - t|x|² ∈ Σ`; the level is
/// accepted when `t ≥ ROA_MARGIN` and the margin-`ROA_MARGIN` polynomial
/// re-verifies on its own.
fn certify_level(
    v: &Polynomial,
    vdot: &Polynomial,
    vars: &[usize],
    gamma: f64,
) -> Option<(GramCertificate, GramCertificate)> {
    let n = v.nvars();
    let sigma_deg = even_up(vdot.degree()).saturating_sub(v.degree());
    let norm = sum_squares(n, vars.iter().copied());
    let mut prog = SosProgram::new(n);
    let t = prog.add_decision(Sign::Free, -1.0);
    let sigma = prog.add_multiplier(vars, sigma_deg);
    let c = prog.add_constraint(-vdot, vars);
    prog.add_decision_term(c, t, -&norm);
    prog.add_multiplier_term(c, sigma, v - &Polynomial::constant(n, gamma));
    let sol = solve_sos_program(&prog).ok()?;
    if sol.decisions[t] < ROA_MARGIN {
        return None;
    }
    let shifted = v - &Polynomial::constant(n, gamma);
    let base = &(-vdot) - &norm.scale(ROA_MARGIN);
    INFLATE.iter().find_map(|&eta| {
        let sigma_cert = clip_psd(&sol.multipliers[sigma], eta);
        let cert = prove_sos(&(&base + &(&sigma_cert.target * &shifted)), vars).ok()?;
        Some((cert, sigma_cert))
    })
}

/// Scales `cert` so that `{V ≤ 1}` is the largest certified sublevel set
/// found by the level search.
pub fn roa_scale(
    model: &NetworkModel,
    cert: &LyapunovCertificate,
) -> Result<LyapunovCertificate, CertifyError> {
    let i = cert.subsystem;
    let vars: Vec<usize> = cert.vars.clone().collect();
    let v = quadratic_form(model.n(), cert.vars.clone(), &cert.p);
    let vdot = lie_derivative(&v, cert.vars.clone(), &model.subsystem(i).f);
    let level = |g: f64| certify_level(&v, &vdot, &vars, g);

    let (mut lo, mut hi, mut best) = match level(GAMMA_CAP) {
        Some(e) => (GAMMA_CAP, GAMMA_CAP, Some(e)),
        None => {
            let mut g = 1.0;
            loop {
                if let Some(e) = level(g) {
                    break (g, if g == 1.0 { GAMMA_CAP } else { 2.0 * g }, Some(e));
                }
                g *= 0.5;
                if g < GAMMA_FLOOR {
                    return Err(CertifyError::NoCertifiableLevel {
                        subsystem: i,
                        floor: GAMMA_FLOOR,
                    });
                }
            }
        }
    };
    while hi - lo > GAMMA_RESOLUTION * lo {
        let mid = 0.5 * (lo + hi);
        match level(mid) {
            Some(e) => {
                lo = mid;
                best = Some(e);
            }
            None => hi = mid,
        }
    }
    Ok(LyapunovCertificate {
        subsystem: i,
        vars: cert.vars.clone(),
        p: cert.p.clone(),
        gamma_max: Some(lo),
        v: v.scale(1.0 / lo),
        roa: best,
    })
}

/// Scaled Lyapunov certificates for every subsystem, solved in parallel.
pub fn lyapunov_certificates(
    model: &NetworkModel,
) -> Result<Vec<LyapunovCertificate>, CertifyError> {
    (0..model.m())
        .into_par_iter()
        .map(|i| roa_scale(model, &isolated_lf(model, i)?))
        .collect()
}

/// Projects a multiplier's Gram matrix onto the PSD cone and scales it by
/// `1 + inflate`.
fn clip_psd(cert: &GramCertificate, inflate: f64) -> GramCertificate {
    let n = cert.target.nvars();
    if cert.basis.is_empty() {
        return GramCertificate::new(Polynomial::zero(n), Vec::new(), DenseMatrix::zeros(0, 0));
    }
    let mut q = cert.q.clone();
    q.symmetrize();
    let q = match sym_eigen(&q) {
        Ok((vals, vecs)) if vals[0] < 0.0 => {
            let d = vals.len();
            DenseMatrix::from_fn(d, d, |r, c| {
                (0..d)
                    .map(|k| vals[k].max(0.0) * vecs[(r, k)] * vecs[(c, k)])
                    .sum()
            })
        }
        _ => q,
    };
    let q = q.scale(1.0 + inflate);
    GramCertificate::new(gram_polynomial(n, &cert.basis, &q), cert.basis.clone(), q)
}

/// `(δ, η)` pairs: objective slack `δ`, then the same slack together with a
/// multiplier inflation `η = δ`.
fn backoff_schedule() -> impl Iterator<Item = (f64, f64)> {
    BACKOFF.into_iter().flat_map(|d| [(d, 0.0), (d, d)])
}

fn check_gamma(model: &NetworkModel, gamma: &[f64]) -> Result<(), CertifyError> {
    if gamma.len() != model.m() {
        return Err(CertifyError::InvalidGamma(format!(
            "{} levels for {} subsystems",
            gamma.len(),
            model.m()
        )));
    }
    if let Some(g) = gamma.iter().find(|g| !(**g > 0.0 && **g <= 1.0)) {
        return Err(CertifyError::InvalidGamma(format!("{g} is outside (0, 1]")));
    }
    Ok(())
}

fn not_proven(context: String, e: SosError) -> CertifyError {
    CertifyError::NotProven {
        context,
        reason: e.to_string(),
    }
}

/// Row `i` of the comparison matrix.
///
/// Minimizes `Σ_j a_ij` subject to
/// `-∇V_iᵀF_i + Σ_j a_ij V_j + Σ_j σ_ij (V_j - γ_j) ∈ Σ[x_{N_i}]`.
pub fn cm_row(
    model: &NetworkModel,
    i: usize,
    lfs: &[LyapunovCertificate],
    gamma: &[f64],
) -> Result<CmRow, CertifyError> {
    check_gamma(model, gamma)?;
    let n = model.n();
    let nbrs = model.neighbors(i);
    let support = model.neighbor_vars(i);
    let vdot = lie_derivative(&lfs[i].v, model.vars(i), &model.node_field(i));
    let sigma_deg = even_up(vdot.degree()).saturating_sub(2);

    let mut prog = SosProgram::new(n);
    let c = prog.add_constraint(-&vdot, &support);
    let mut dec = Vec::with_capacity(nbrs.len());
    let mut sig = Vec::with_capacity(nbrs.len());
    for &j in &nbrs {
        let sign = if j == i {
            Sign::Free
        } else {
            Sign::NonNegative
        };
        let d = prog.add_decision(sign, 1.0);
        prog.add_decision_term(c, d, lfs[j].v.clone());
        let s = prog.add_multiplier(&support, sigma_deg);
        prog.add_multiplier_term(c, s, &lfs[j].v - &Polynomial::constant(n, gamma[j]));
        dec.push(d);
        sig.push(s);
    }
    let ctx = || format!("comparison row {i}");
    let sol = match solve_sos_program(&prog) {
        Ok(s) => s,
        Err(SosError::Infeasible) => return Err(CertifyError::RowInfeasible { row: i }),
        Err(e) => return Err(not_proven(ctx(), e)),
    };
    let raw: Vec<f64> = nbrs
        .iter()
        .zip(&dec)
        .map(|(&j, &d)| {
            if j == i {
                sol.decisions[d]
            } else {
                sol.decisions[d].max(0.0)
            }
        })
        .collect();
    let mut last = None;
    for (delta, eta) in backoff_schedule() {
        let sigmas: Vec<GramCertificate> = sig
            .iter()
            .map(|&s| clip_psd(&sol.multipliers[s], eta))
            .collect();
        let mut p = -&vdot;
        for (k, &j) in nbrs.iter().enumerate() {
            p = &p + &(&sigmas[k].target * &(&lfs[j].v - &Polynomial::constant(n, gamma[j])));
            p = &p + &lfs[j].v.scale(raw[k] + delta);
        }
        match prove_sos(&p, &support) {
            Ok(cert) => {
                let mut a = vec![0.0; model.m()];
                for (k, &j) in nbrs.iter().enumerate() {
                    a[j] = raw[k] + delta;
                }
                return Ok(CmRow {
                    node: i,
                    a,
                    multipliers: nbrs.iter().copied().zip(sigmas).collect(),
                    certificate: Some(cert),
                    backoff: delta,
                });
            }
            Err(e) => last = Some(e),
        }
    }
    Err(not_proven(
        ctx(),
        last.expect("at least one back-off level"),
    ))
}

/// Stacks solved rows into the comparison matrix and tests it.
pub fn assemble_cm(
    mut rows: Vec<CmRow>,
    gamma: &[f64],
) -> Result<ComparisonCertificate, CertifyError> {
    rows.sort_by_key(|r| r.node);
    let m = rows.len();
    if let Some(r) = rows
        .iter()
        .enumerate()
        .find(|(k, r)| r.node != *k || r.a.len() != m)
    {
        return Err(CertifyError::Linalg(LinalgError::DimensionMismatch(
            format!("row for node {} does not fit an {m}x{m} matrix", r.1.node),
        )));
    }
    let a = DenseMatrix::from_fn(m, m, |r, c| rows[r].a[c]);
    let hurwitz = metzler_hurwitz(&a)?;
    Ok(ComparisonCertificate {
        a,
        gamma: gamma.to_vec(),
        rows,
        hurwitz,
    })
}

/// Solves every row in parallel and assembles the comparison matrix.
pub fn comparison_certificate(
    model: &NetworkModel,
    lfs: &[LyapunovCertificate],
    gamma: &[f64],
) -> Result<ComparisonCertificate, CertifyError> {
    check_gamma(model, gamma)?;
    let rows = (0..model.m())
        .into_par_iter()
        .map(|i| cm_row(model, i, lfs, gamma))
        .collect::<Result<Vec<_>, _>>()?;
    assemble_cm(rows, gamma)
}

/// `φ_ij = ∇V_iᵀ g_ij` for the edge `target ← source` (zero without coupling).
pub fn power_flow(
    model: &NetworkModel,
    lfs: &[LyapunovCertificate],
    target: usize,
    source: usize,
) -> Polynomial {
    match model.coupling(target, source) {
        Some(c) => lie_derivative(&lfs[target].v, model.vars(target), &c.g),
        None => Polynomial::zero(model.n()),
    }
}

/// Minimal `u ≥ 0` on `{target, source}` with `|φ| ≤ uᵀv` on the domain.
pub fn flow_bound(
    model: &NetworkModel,
    lfs: &[LyapunovCertificate],
    gamma: &[f64],
    target: usize,
    source: usize,
) -> Result<FlowBound, CertifyError> {
    check_gamma(model, gamma)?;
    let n = model.n();
    let phi = power_flow(model, lfs, target, source);
    let mut u = vec![0.0; model.m()];
    if phi.is_zero() {
        return Ok(FlowBound {
            target,
            source,
            u,
            phi,
            evidence: None,
        });
    }
    let nodes = if target == source {
        vec![target]
    } else {
        vec![target, source]
    };
    let support: Vec<usize> = nodes.iter().flat_map(|&k| model.vars(k)).collect();
    let sigma_deg = even_up(phi.degree()).saturating_sub(2);
    let mut prog = SosProgram::new(n);
    let dec: Vec<usize> = nodes
        .iter()
        .map(|_| prog.add_decision(Sign::NonNegative, 1.0))
        .collect();
    let mut sigs = Vec::new();
    for sign in [-1.0, 1.0] {
        let c = prog.add_constraint(phi.scale(sign), &support);
        let mut row = Vec::new();
        for (k, &node) in nodes.iter().enumerate() {
            prog.add_decision_term(c, dec[k], lfs[node].v.clone());
            let s = prog.add_multiplier(&support, sigma_deg);
            prog.add_multiplier_term(c, s, &lfs[node].v - &Polynomial::constant(n, gamma[node]));
            row.push(s);
        }
        sigs.push(row);
    }
    let ctx = || format!("flow bound {target} <- {source}");
    let sol = match solve_sos_program(&prog) {
        Ok(s) => s,
        Err(SosError::Infeasible) => {
            return Err(CertifyError::FlowInfeasible {
                target,
                neighbor: source,
            })
        }
        Err(e) => return Err(not_proven(ctx(), e)),
    };
    let raw: Vec<f64> = dec.iter().map(|&d| sol.decisions[d].max(0.0)).collect();
    let mut last = None;
    'backoff: for (delta, eta) in backoff_schedule() {
        let mut uv = Polynomial::zero(n);
        for (k, &node) in nodes.iter().enumerate() {
            uv = &uv + &lfs[node].v.scale(raw[k] + delta);
        }
        let mut certs = Vec::new();
        for (sign, row) in [-1.0, 1.0].into_iter().zip(&sigs) {
            let mut p = &phi.scale(sign) + &uv;
            for (k, &node) in nodes.iter().enumerate() {
                let s = clip_psd(&sol.multipliers[row[k]], eta);
                p = &p + &(&s.target * &(&lfs[node].v - &Polynomial::constant(n, gamma[node])));
            }
            match prove_sos(&p, &support) {
                Ok(c) => certs.push(c),
                Err(e) => {
                    last = Some(e);
                    continue 'backoff;
                }
            }
        }
        for (k, &node) in nodes.iter().enumerate() {
            u[node] = raw[k] + delta;
        }
        let [lo, hi]: [GramCertificate; 2] = certs.try_into().expect("two signs");
        return Ok(FlowBound {
            target,
            source,
            u,
            phi,
            evidence: Some([lo, hi]),
        });
    }
    Err(not_proven(
        ctx(),
        last.expect("at least one back-off level"),
    ))
}

/// Flow bounds for every coupled edge, solved in parallel, in edge order.
pub fn flow_bounds(
    model: &NetworkModel,
    lfs: &[LyapunovCertificate],
    gamma: &[f64],
) -> Result<Vec<FlowBound>, CertifyError> {
    model
        .edges()
        .into_par_iter()
        .map(|(t, s)| flow_bound(model, lfs, gamma, t, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_lyapunov_equation() {
        let p = lyapunov_equation(&DenseMatrix::from_rows(&[vec![-1.0]]).unwrap()).unwrap();
        assert!((p[(0, 0)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn assemble_verdicts() {
        let rows = |a: [[f64; 2]; 2]| {
            vec![
                CmRow::from_coefficients(0, a[0].to_vec()),
                CmRow::from_coefficients(1, a[1].to_vec()),
            ]
        };
        let g = [1.0, 1.0];
        let v = |a| assemble_cm(rows(a), &g).unwrap().hurwitz;
        assert_eq!(
            v([[-2.0, 0.1], [0.1, -2.0]]),
            HurwitzVerdict::HurwitzByDominance
        );
        assert_eq!(v([[-1.0, 2.0], [2.0, -1.0]]), HurwitzVerdict::NotHurwitz);
        assert_eq!(
            v([[-1.0, 2.0], [0.1, -1.0]]),
            HurwitzVerdict::HurwitzByMinors
        );
    }
}
