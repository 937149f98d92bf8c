//! Sum-of-squares programs compiled to block SDPs by Gram coefficient
//! matching.

use std::collections::BTreeMap;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

use super::sdp::{solve_sdp, LinearFunctional, SdpError, SdpProblem, SdpStatus};
use crate::linalg::cholesky;
use crate::polyalg::PolyError;
use crate::{DenseMatrix, Monomial, Polynomial};

/// Gram residual tolerance, relative to `1 + max|coef|` of the target.
pub const GRAM_RESIDUAL_TOL: f64 = 1e-7;
/// Diagonal shift applied before the Cholesky check of a Gram matrix.
pub const GRAM_PSD_SHIFT: f64 = 1e-9;
const SOS_FEAS_TOL: f64 = 1e-7;
const SOS_MAX_ITER: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SosError {
    #[error("polynomial is not a sum of squares")]
    Infeasible,
    #[error("SOS program objective is unbounded")]
    Unbounded,
    #[error("solver stopped without a verdict ({0:?})")]
    NotProven(SdpStatus),
    #[error("certificate failed re-verification: {0}")]
    Verification(String),
    #[error("malformed SOS program: {0}")]
    InvalidProgram(String),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// All monomials in `vars` with total degree in `lo..=hi`, graded-lex order.
pub fn monomials_in_range(vars: &[usize], lo: u32, hi: u32) -> Vec<Monomial> {
    fn rec(vars: &[usize], budget: u32, prefix: &mut Vec<(usize, u32)>, out: &mut Vec<Monomial>) {
        let Some((&v, rest)) = vars.split_first() else {
            out.push(Monomial::from_pairs(prefix.iter().copied()));
            return;
        };
        for e in 0..=budget {
            prefix.push((v, e));
            rec(rest, budget - e, prefix, out);
            prefix.pop();
        }
    }
    let mut vs = vars.to_vec();
    vs.sort_unstable();
    vs.dedup();
    let mut out = Vec::new();
    rec(&vs, hi, &mut Vec::new(), &mut out);
    out.retain(|m| m.degree() >= lo);
    out.sort();
    out
}

/// Gram basis: every monomial of degree `<= degree/2` in the support
/// variables (all `nvars` variables when `support` is `None`).
pub fn gram_basis(nvars: usize, degree: u32, support: Option<&[usize]>) -> Vec<Monomial> {
    let all: Vec<usize> = (0..nvars).collect();
    monomials_in_range(support.unwrap_or(&all), 0, degree / 2)
}

/// `zᵀ Q z` as a polynomial.
pub fn gram_polynomial(nvars: usize, basis: &[Monomial], q: &DenseMatrix) -> Polynomial {
    let mut terms = Vec::with_capacity(basis.len() * (basis.len() + 1) / 2);
    for a in 0..basis.len() {
        for b in a..basis.len() {
            let w = if a == b { 1.0 } else { 2.0 };
            terms.push((basis[a].mul(&basis[b]), w * q[(a, b)]));
        }
    }
    Polynomial::from_terms(nvars, terms).expect("basis variables in range")
}

/// Evidence that `target` is a sum of squares: `target ≈ zᵀ Q z`, `Q ⪰ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramCertificate {
    pub basis: Vec<Monomial>,
    pub q: DenseMatrix,
    pub target: Polynomial,
    /// `target - zᵀ Q z`
    pub residual: Polynomial,
}

impl GramCertificate {
    pub fn new(target: Polynomial, basis: Vec<Monomial>, q: DenseMatrix) -> Self {
        let residual = &target - &gram_polynomial(target.nvars(), &basis, &q);
        Self {
            basis,
            q,
            target,
            residual,
        }
    }

    /// Largest residual coefficient relative to `1 + max|coef target|`.
    pub fn relative_residual(&self) -> f64 {
        self.residual.max_abs_coeff() / (1.0 + self.target.max_abs_coeff())
    }

    /// Independent check: rebuilds `zᵀQz` from scratch and factors
    /// `Q + GRAM_PSD_SHIFT·I`.
    pub fn verify(&self) -> Result<(), SosError> {
        let rebuilt = gram_polynomial(self.target.nvars(), &self.basis, &self.q);
        let diff = (&self.target - &rebuilt).max_abs_coeff();
        let tol = GRAM_RESIDUAL_TOL * (1.0 + self.target.max_abs_coeff());
        if diff > tol {
            return Err(SosError::Verification(format!(
                "Gram residual {diff:e} exceeds {tol:e}"
            )));
        }
        if self.basis.is_empty() {
            return Ok(());
        }
        let mut shifted = self.q.clone();
        shifted.symmetrize();
        for i in 0..shifted.rows() {
            shifted[(i, i)] += GRAM_PSD_SHIFT;
        }
        cholesky(&shifted).map_err(|e| SosError::Verification(format!("Gram matrix: {e}")))?;
        Ok(())
    }
}

impl Serialize for GramCertificate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("GramCertificate", 4)?;
        let basis: Vec<String> = self.basis.iter().map(|m| m.to_string()).collect();
        st.serialize_field("basis", &basis)?;
        st.serialize_field("gram", &self.q.to_rows())?;
        st.serialize_field("residual_max", &self.residual.max_abs_coeff())?;
        st.serialize_field("target", &self.target.to_string())?;
        st.end()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Free,
    NonNegative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub sign: Sign,
    /// Coefficient in the minimized objective.
    pub objective: f64,
}

/// SOS multiplier `σ = wᵀ Q w` with `w` all monomials in `support` of
/// degree `min_half..=max_half`.
#[derive(Clone, Debug, PartialEq)]
pub struct Multiplier {
    pub support: Vec<usize>,
    pub min_half: u32,
    pub max_half: u32,
}

impl Multiplier {
    pub fn basis(&self) -> Vec<Monomial> {
        if self.min_half > self.max_half {
            return Vec::new();
        }
        monomials_in_range(&self.support, self.min_half, self.max_half)
    }

    pub fn degree(&self) -> u32 {
        2 * self.max_half
    }
}

/// `constant + Σ d_k·P_k + Σ σ_m·H_m ∈ Σ[x_support]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SosConstraint {
    pub constant: Polynomial,
    pub decision_terms: Vec<(usize, Polynomial)>,
    pub multiplier_terms: Vec<(usize, Polynomial)>,
    pub support: Vec<usize>,
}

/// Minimize `Σ objective_k·d_k` subject to a list of SOS constraints that
/// are affine in the decision scalars and the multipliers.
#[derive(Clone, Debug, PartialEq)]
pub struct SosProgram {
    nvars: usize,
    pub decisions: Vec<Decision>,
    pub multipliers: Vec<Multiplier>,
    pub constraints: Vec<SosConstraint>,
}

impl SosProgram {
    pub fn new(nvars: usize) -> Self {
        Self {
            nvars,
            decisions: Vec::new(),
            multipliers: Vec::new(),
            constraints: Vec::new(),
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn add_decision(&mut self, sign: Sign, objective: f64) -> usize {
        self.decisions.push(Decision { sign, objective });
        self.decisions.len() - 1
    }

    /// Multiplier of even `degree` whose Gram basis starts at degree 1, so
    /// `σ(0) = 0`.
    pub fn add_multiplier(&mut self, support: &[usize], degree: u32) -> usize {
        self.add_multiplier_range(support, 1, degree / 2)
    }

    /// Multiplier with the full basis of degree `0..=degree/2`.
    pub fn add_full_multiplier(&mut self, support: &[usize], degree: u32) -> usize {
        self.add_multiplier_range(support, 0, degree / 2)
    }

    pub fn add_multiplier_range(
        &mut self,
        support: &[usize],
        min_half: u32,
        max_half: u32,
    ) -> usize {
        self.multipliers.push(Multiplier {
            support: support.to_vec(),
            min_half,
            max_half,
        });
        self.multipliers.len() - 1
    }

    /// Adds the constraint `constant ∈ Σ[x_support]`; terms are attached
    /// afterwards.
    pub fn add_constraint(&mut self, constant: Polynomial, support: &[usize]) -> usize {
        self.constraints.push(SosConstraint {
            constant,
            decision_terms: Vec::new(),
            multiplier_terms: Vec::new(),
            support: support.to_vec(),
        });
        self.constraints.len() - 1
    }

    /// Adds `d_decision · p` to a constraint.
    pub fn add_decision_term(&mut self, constraint: usize, decision: usize, p: Polynomial) {
        self.constraints[constraint]
            .decision_terms
            .push((decision, p));
    }

    /// Adds `σ_multiplier · h` to a constraint.
    pub fn add_multiplier_term(&mut self, constraint: usize, multiplier: usize, h: Polynomial) {
        self.constraints[constraint]
            .multiplier_terms
            .push((multiplier, h));
    }

    fn validate(&self) -> Result<(), SosError> {
        let bad = |msg: String| Err(SosError::InvalidProgram(msg));
        for (k, c) in self.constraints.iter().enumerate() {
            let polys = std::iter::once(&c.constant)
                .chain(c.decision_terms.iter().map(|t| &t.1))
                .chain(c.multiplier_terms.iter().map(|t| &t.1));
            for p in polys {
                if p.nvars() != self.nvars {
                    return bad(format!(
                        "constraint {k}: polynomial in {} variables",
                        p.nvars()
                    ));
                }
            }
            if let Some(&(d, _)) = c
                .decision_terms
                .iter()
                .find(|t| t.0 >= self.decisions.len())
            {
                return bad(format!("constraint {k}: unknown decision {d}"));
            }
            if let Some(&(m, _)) = c
                .multiplier_terms
                .iter()
                .find(|t| t.0 >= self.multipliers.len())
            {
                return bad(format!("constraint {k}: unknown multiplier {m}"));
            }
            if c.support.iter().any(|&v| v >= self.nvars) {
                return bad(format!("constraint {k}: support variable out of range"));
            }
        }
        for (k, m) in self.multipliers.iter().enumerate() {
            if m.support.iter().any(|&v| v >= self.nvars) {
                return bad(format!("multiplier {k}: support variable out of range"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SosSolution {
    pub decisions: Vec<f64>,
    pub objective: f64,
    /// Gram certificate of each multiplier `σ_m`.
    pub multipliers: Vec<GramCertificate>,
    /// Gram certificate of each constraint polynomial after substitution.
    pub certificates: Vec<GramCertificate>,
    pub iterations: usize,
}

impl SosSolution {
    pub fn multiplier_polynomial(&self, m: usize) -> &Polynomial {
        &self.multipliers[m].target
    }
}

enum Var {
    Free(usize),
    Block(usize),
}

/// A compiled program: the SDP plus the bookkeeping needed to read it back.
pub struct CompiledSos {
    pub sdp: SdpProblem,
    decision_vars: Vec<Var>,
    multiplier_blocks: Vec<Option<(usize, Vec<Monomial>)>>,
    constraint_blocks: Vec<Option<(usize, Vec<Monomial>)>>,
    // each constraint's equations are divided by this; its Gram block holds Q / scale
    constraint_scales: Vec<f64>,
}

fn degree_range(p: &Polynomial) -> Option<(u32, u32)> {
    (!p.is_zero()).then(|| (p.min_degree(), p.degree()))
}

fn merge_range(acc: Option<(u32, u32)>, r: Option<(u32, u32)>) -> Option<(u32, u32)> {
    match (acc, r) {
        (None, r) => r,
        (a, None) => a,
        (Some((a0, a1)), Some((b0, b1))) => Some((a0.min(b0), a1.max(b1))),
    }
}

/// Row accumulator keyed by variable position.
#[derive(Default)]
struct Row {
    entries: BTreeMap<(usize, usize, usize), f64>,
    free: BTreeMap<usize, f64>,
}

impl Row {
    fn into_functional(self) -> LinearFunctional {
        let mut f = LinearFunctional::new();
        for ((b, r, c), v) in self.entries {
            if v != 0.0 {
                f.add_entry(b, r, c, v);
            }
        }
        for (k, v) in self.free {
            if v != 0.0 {
                f.add_free(k, v);
            }
        }
        f
    }
}

/// Compiles a program to an SDP.
///
/// The Gram basis of each constraint spans degrees
/// `ceil(lo/2)..=floor(hi/2)`, where `lo..=hi` bounds the degrees any
/// instance of the constraint polynomial can have: an SOS polynomial whose
/// lowest-degree terms have degree `lo` cannot use squares of lower degree.
pub fn compile(prog: &SosProgram) -> Result<CompiledSos, SosError> {
    prog.validate()?;
    let mut sdp = SdpProblem::new();
    let decision_vars: Vec<Var> = prog
        .decisions
        .iter()
        .map(|d| match d.sign {
            Sign::Free => Var::Free(sdp.add_free()),
            Sign::NonNegative => Var::Block(sdp.add_block(1)),
        })
        .collect();
    for (d, v) in prog.decisions.iter().zip(&decision_vars) {
        if d.objective != 0.0 {
            match *v {
                Var::Free(k) => {
                    sdp.objective.add_free(k, d.objective);
                }
                Var::Block(b) => {
                    sdp.objective.add_entry(b, 0, 0, d.objective);
                }
            }
        }
    }
    let multiplier_blocks: Vec<Option<(usize, Vec<Monomial>)>> = prog
        .multipliers
        .iter()
        .map(|m| {
            let basis = m.basis();
            (!basis.is_empty()).then(|| (sdp.add_block(basis.len()), basis))
        })
        .collect();

    let mut constraint_blocks = Vec::with_capacity(prog.constraints.len());
    let mut constraint_scales = Vec::with_capacity(prog.constraints.len());
    for con in &prog.constraints {
        let scale = con.constant.max_abs_coeff().max(1.0);
        let mut range = degree_range(&con.constant);
        for (_, p) in &con.decision_terms {
            range = merge_range(range, degree_range(p));
        }
        for (m, h) in &con.multiplier_terms {
            if multiplier_blocks[*m].is_some() && !h.is_zero() {
                let mm = &prog.multipliers[*m];
                range = merge_range(
                    range,
                    Some((
                        2 * mm.min_half + h.min_degree(),
                        2 * mm.max_half + h.degree(),
                    )),
                );
            }
        }
        let gram = range.and_then(|(lo, hi)| {
            let basis = monomials_in_range(&con.support, lo.div_ceil(2), hi / 2);
            (!basis.is_empty()).then(|| (sdp.add_block(basis.len()), basis))
        });

        let mut rows: BTreeMap<Monomial, (Row, f64)> = BTreeMap::new();
        if let Some((blk, basis)) = &gram {
            for a in 0..basis.len() {
                for b in a..basis.len() {
                    let w = if a == b { 1.0 } else { 2.0 };
                    let row = &mut rows.entry(basis[a].mul(&basis[b])).or_default().0;
                    *row.entries.entry((*blk, a, b)).or_insert(0.0) += w;
                }
            }
        }
        for (m, c) in con.constant.terms() {
            rows.entry(m.clone()).or_default().1 += c / scale;
        }
        for (d, p) in &con.decision_terms {
            for (m, &c) in p.terms() {
                let row = &mut rows.entry(m.clone()).or_default().0;
                match decision_vars[*d] {
                    Var::Free(k) => *row.free.entry(k).or_insert(0.0) -= c / scale,
                    Var::Block(b) => *row.entries.entry((b, 0, 0)).or_insert(0.0) -= c / scale,
                }
            }
        }
        for (mi, h) in &con.multiplier_terms {
            let Some((blk, basis)) = &multiplier_blocks[*mi] else {
                continue;
            };
            for a in 0..basis.len() {
                for b in a..basis.len() {
                    let w = if a == b { 1.0 } else { 2.0 };
                    let ab = basis[a].mul(&basis[b]);
                    for (hm, &hc) in h.terms() {
                        let row = &mut rows.entry(ab.mul(hm)).or_default().0;
                        *row.entries.entry((*blk, a, b)).or_insert(0.0) -= w * hc / scale;
                    }
                }
            }
        }
        for (row, rhs) in rows.into_values() {
            let f = row.into_functional();
            if f.is_empty() {
                if rhs.abs() > 1e-12 {
                    // a term no decision, multiplier or square can reach
                    return Err(SosError::Infeasible);
                }
                continue;
            }
            sdp.add_constraint(f, rhs);
        }
        constraint_blocks.push(gram);
        constraint_scales.push(scale);
    }
    Ok(CompiledSos {
        sdp,
        decision_vars,
        multiplier_blocks,
        constraint_blocks,
        constraint_scales,
    })
}

/// Solves an SOS program and returns decision values with certificates for
/// every multiplier and every constraint.
pub fn solve_sos_program(prog: &SosProgram) -> Result<SosSolution, SosError> {
    let compiled = compile(prog)?;
    let sol = solve_sdp(&compiled.sdp, SOS_FEAS_TOL, SOS_MAX_ITER)?;
    match sol.status {
        SdpStatus::Optimal => {}
        SdpStatus::Infeasible => return Err(SosError::Infeasible),
        SdpStatus::Unbounded => return Err(SosError::Unbounded),
        s => return Err(SosError::NotProven(s)),
    }
    let n = prog.nvars;
    let decisions: Vec<f64> = compiled
        .decision_vars
        .iter()
        .map(|v| match *v {
            Var::Free(k) => sol.free[k],
            Var::Block(b) => sol.blocks[b][(0, 0)],
        })
        .collect();
    let multipliers: Vec<GramCertificate> = compiled
        .multiplier_blocks
        .iter()
        .map(|mb| match mb {
            Some((blk, basis)) => {
                let q = sol.blocks[*blk].clone();
                GramCertificate::new(gram_polynomial(n, basis, &q), basis.clone(), q)
            }
            None => GramCertificate::new(Polynomial::zero(n), Vec::new(), DenseMatrix::zeros(0, 0)),
        })
        .collect();
    let mut certificates = Vec::with_capacity(prog.constraints.len());
    for ((con, gram), scale) in prog
        .constraints
        .iter()
        .zip(&compiled.constraint_blocks)
        .zip(&compiled.constraint_scales)
    {
        let target = substitute(con, &decisions, &multipliers)?;
        let (basis, q) = match gram {
            Some((blk, basis)) => (basis.clone(), sol.blocks[*blk].scale(*scale)),
            None => (Vec::new(), DenseMatrix::zeros(0, 0)),
        };
        certificates.push(GramCertificate::new(target, basis, q));
    }
    let objective = prog
        .decisions
        .iter()
        .zip(&decisions)
        .map(|(d, v)| d.objective * v)
        .sum();
    Ok(SosSolution {
        decisions,
        objective,
        multipliers,
        certificates,
        iterations: sol.iterations,
    })
}

/// The constraint polynomial with decision values and multipliers plugged in.
pub fn substitute(
    con: &SosConstraint,
    decisions: &[f64],
    multipliers: &[GramCertificate],
) -> Result<Polynomial, SosError> {
    let mut p = con.constant.clone();
    for (d, q) in &con.decision_terms {
        p = p.try_add(&q.scale(decisions[*d]))?;
    }
    for (m, h) in &con.multiplier_terms {
        p = p.try_add(&multipliers[*m].target.try_mul(h)?)?;
    }
    Ok(p)
}

/// Searches for a Gram certificate of `p` over the monomials in `support`.
pub fn prove_sos(p: &Polynomial, support: &[usize]) -> Result<GramCertificate, SosError> {
    if p.is_zero() {
        return Ok(GramCertificate::new(
            p.clone(),
            Vec::new(),
            DenseMatrix::zeros(0, 0),
        ));
    }
    if p.degree() % 2 == 1 {
        return Err(SosError::Infeasible);
    }
    let mut prog = SosProgram::new(p.nvars());
    prog.add_constraint(p.clone(), support);
    let sol = solve_sos_program(&prog)?;
    let cert = sol.certificates.into_iter().next().expect("one constraint");
    cert.verify()?;
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(n: usize, i: usize) -> Polynomial {
        Polynomial::var(n, i).unwrap()
    }

    #[test]
    fn basis_counts() {
        assert_eq!(
            gram_basis(1, 2, None),
            vec![Monomial::one(), Monomial::var(0)]
        );
        assert_eq!(gram_basis(2, 4, None).len(), 6);
        assert_eq!(gram_basis(4, 4, Some(&[1, 3])).len(), 6);
    }

    #[test]
    fn square_of_sum() {
        let s = &x(2, 0) + &x(2, 1);
        let cert = prove_sos(&(&s * &s), &[0, 1]).unwrap();
        cert.verify().unwrap();
        assert!(cert.relative_residual() <= 1e-7);
    }

    #[test]
    fn negative_at_origin_rejected() {
        let p = &(&x(1, 0) * &x(1, 0)) - &Polynomial::constant(1, 1.0);
        assert_eq!(prove_sos(&p, &[0]), Err(SosError::Infeasible));
    }

    #[test]
    fn minimize_coefficient() {
        // min a s.t. a·x² − 2x² ∈ Σ
        let mut prog = SosProgram::new(1);
        let a = prog.add_decision(Sign::Free, 1.0);
        let x2 = &x(1, 0) * &x(1, 0);
        let c = prog.add_constraint(x2.scale(-2.0), &[0]);
        prog.add_decision_term(c, a, x2);
        let sol = solve_sos_program(&prog).unwrap();
        assert!(
            (sol.decisions[0] - 2.0).abs() < 1e-5,
            "{}",
            sol.decisions[0]
        );
    }

    #[test]
    fn putinar_identity() {
        // 1 − x² = σ0 + σ1·(1 − x²) with σ1 = 1
        let k = &Polynomial::constant(1, 1.0) - &(&x(1, 0) * &x(1, 0));
        let mut prog = SosProgram::new(1);
        let s1 = prog.add_full_multiplier(&[0], 0);
        let c = prog.add_constraint(k.clone(), &[0]);
        prog.add_multiplier_term(c, s1, -&k);
        let sol = solve_sos_program(&prog).unwrap();
        sol.certificates[0].verify().unwrap();
        assert!(sol.multipliers[0].target.constant_term() >= -1e-9);
    }
}
