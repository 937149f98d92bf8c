//! Fixed-step simulation of the network and of its comparison system, flow
//! measurement, level-set sampling and trajectory-level validation of the
//! certificates.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::certify::{power_flow, ComparisonCertificate, FlowBound, LyapunovCertificate};
use crate::linalg::{cholesky, lower_inverse, solve_linear, LinalgError};
use crate::netmodel::NetworkModel;
use crate::{DenseMatrix, Polynomial};

/// State norm treated as divergence.
pub const BLOWUP_NORM: f64 = 1e6;
pub const DEFAULT_HORIZON: f64 = 20.0;
pub const DEFAULT_DT: f64 = 1e-3;
/// Relative slack on the certified energy bound.
pub const BOUND_REL_TOL: f64 = 1e-6;
/// Absolute slack of the energy-bound check.
pub const BOUND_ABS_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("state norm {norm:e} exceeded the blow-up threshold at t = {time}")]
    Blowup { time: f64, norm: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("level {0} is outside (0, 1]")]
    InvalidLevel(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Polynomial flattened for repeated evaluation.
#[derive(Clone, Debug)]
struct Compiled {
    terms: Vec<(f64, Vec<(usize, i32)>)>,
}

impl Compiled {
    fn new(p: &Polynomial) -> Self {
        Self {
            terms: p
                .terms()
                .map(|(m, &c)| (c, m.powers().map(|(v, e)| (v, e as i32)).collect()))
                .collect(),
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (c, pw) in &self.terms {
            let mut t = *c;
            for &(v, e) in pw {
                t *= if e == 1 { x[v] } else { x[v].powi(e) };
            }
            acc += t;
        }
        acc
    }
}

fn compile_all(ps: &[Polynomial]) -> Vec<Compiled> {
    ps.iter().map(Compiled::new).collect()
}

fn check_grid(horizon: f64, dt: f64) -> Result<usize, SimError> {
    if !(dt > 0.0) || !(horizon >= dt) || !horizon.is_finite() {
        return Err(SimError::InvalidGrid(format!(
            "horizon {horizon}, step {dt}"
        )));
    }
    Ok((horizon / dt).round().max(1.0) as usize)
}

fn rk4_step(
    f: &impl Fn(&[f64], &mut [f64]),
    x: &[f64],
    h: f64,
    work: &mut [Vec<f64>; 5],
    out: &mut [f64],
) {
    let n = x.len();
    let [k1, k2, k3, k4, tmp] = work;
    f(x, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    f(tmp, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    f(tmp, k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    f(tmp, k4);
    for i in 0..n {
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Classical RK4 over `steps` steps of size `h`; `visit` sees every grid
/// state including the initial one.
fn rk4(
    f: impl Fn(&[f64], &mut [f64]),
    x0: &[f64],
    h: f64,
    steps: usize,
    mut visit: impl FnMut(usize, &[f64]) -> Result<(), SimError>,
) -> Result<Vec<f64>, SimError> {
    let n = x0.len();
    let mut work = [
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    ];
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    visit(0, &x)?;
    for k in 1..=steps {
        rk4_step(&f, &x, h, &mut work, &mut next);
        std::mem::swap(&mut x, &mut next);
        visit(k, &x)?;
    }
    Ok(x)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Simulated network trajectory with its Lyapunov levels and edge powers.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    /// State at every grid time.
    pub x: Vec<Vec<f64>>,
    /// `V_i(x_i(t))` per grid time (empty without Lyapunov functions).
    pub v: Vec<Vec<f64>>,
    /// Edges in [`NetworkModel::edges`] order.
    pub edges: Vec<(usize, usize)>,
    /// `φ_ij(t)` per grid time, one column per edge.
    pub phi: Vec<Vec<f64>>,
    /// Relative change of the final state when the step is halved.
    pub halving_error: f64,
}

impl Trajectory {
    /// CSV with columns `t`, `x*`, `v*`, `phi_<target>_<source>`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        let n = self.x.first().map_or(0, Vec::len);
        let m = self.v.first().map_or(0, Vec::len);
        for i in 0..n {
            let _ = write!(s, ",x{i}");
        }
        for i in 0..m {
            let _ = write!(s, ",v{i}");
        }
        for (a, b) in &self.edges {
            let _ = write!(s, ",phi_{a}_{b}");
        }
        s.push('\n');
        for k in 0..self.t.len() {
            let _ = write!(s, "{:e}", self.t[k]);
            let empty = Vec::new();
            let cols = self.x[k]
                .iter()
                .chain(self.v.get(k).unwrap_or(&empty))
                .chain(self.phi.get(k).unwrap_or(&empty));
            for c in cols {
                let _ = write!(s, ",{c:e}");
            }
            s.push('\n');
        }
        s
    }
}

/// Evaluators for the field, the Lyapunov levels and the edge powers.
struct Observer {
    field: Vec<Compiled>,
    lfs: Vec<Compiled>,
    edges: Vec<(usize, usize)>,
    phi: Vec<Compiled>,
}

impl Observer {
    fn new(model: &NetworkModel, lfs: &[LyapunovCertificate]) -> Self {
        let edges = if lfs.is_empty() {
            Vec::new()
        } else {
            model.edges()
        };
        let phi = edges
            .iter()
            .map(|&(t, s)| Compiled::new(&power_flow(model, lfs, t, s)))
            .collect();
        Self {
            field: compile_all(&model.field()),
            lfs: lfs.iter().map(|l| Compiled::new(&l.v)).collect(),
            edges,
            phi,
        }
    }

    fn rhs(&self, x: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.field) {
            *o = f.eval(x);
        }
    }

    fn levels(&self, x: &[f64]) -> Vec<f64> {
        self.lfs.iter().map(|l| l.eval(x)).collect()
    }

    fn powers(&self, x: &[f64]) -> Vec<f64> {
        self.phi.iter().map(|p| p.eval(x)).collect()
    }
}

fn run(obs: &Observer, x0: &[f64], horizon: f64, dt: f64) -> Result<Trajectory, SimError> {
    match run_until_blowup(obs, x0, horizon, dt)? {
        (tr, None) => Ok(tr),
        (_, Some(e)) => Err(e),
    }
}

/// Like [`run`], but a blowup keeps the grid points recorded before it.
fn run_until_blowup(
    obs: &Observer,
    x0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<(Trajectory, Option<SimError>), SimError> {
    let steps = check_grid(horizon, dt)?;
    let h = horizon / steps as f64;
    let mut tr = Trajectory {
        t: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        v: Vec::new(),
        edges: obs.edges.clone(),
        phi: Vec::new(),
        halving_error: 0.0,
    };
    let record = !obs.lfs.is_empty();
    let result = rk4(
        |x, o| obs.rhs(x, o),
        x0,
        h,
        steps,
        |k, x| {
            let nx = norm(x);
            let time = k as f64 * h;
            if !(nx <= BLOWUP_NORM) {
                return Err(SimError::Blowup { time, norm: nx });
            }
            tr.t.push(time);
            tr.x.push(x.to_vec());
            if record {
                tr.v.push(obs.levels(x));
                tr.phi.push(obs.powers(x));
            }
            Ok(())
        },
    );
    let last = match result {
        Ok(last) => last,
        Err(e @ SimError::Blowup { .. }) => return Ok((tr, Some(e))),
        Err(e) => return Err(e),
    };
    let fine = rk4(|x, o| obs.rhs(x, o), x0, 0.5 * h, 2 * steps, |_, _| Ok(()))?;
    let diff: Vec<f64> = last.iter().zip(&fine).map(|(a, b)| a - b).collect();
    let (nd, nf) = (norm(&diff), norm(&fine));
    tr.halving_error = if nf > 0.0 { nd / nf } else { nd };
    Ok((tr, None))
}

/// Integrates the network from `x0` with fixed-step RK4.
///
/// With Lyapunov functions the levels and edge powers are recorded at
/// every step. The run is repeated at `dt/2` to report
/// [`Trajectory::halving_error`].
pub fn integrate(
    model: &NetworkModel,
    lfs: &[LyapunovCertificate],
    x0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<Trajectory, SimError> {
    if x0.len() != model.n() {
        return Err(SimError::Dimension(format!(
            "{} initial values for {} states",
            x0.len(),
            model.n()
        )));
    }
    if !lfs.is_empty() && lfs.len() != model.m() {
        return Err(SimError::Dimension(format!(
            "{} Lyapunov functions for {} nodes",
            lfs.len(),
            model.m()
        )));
    }
    run(&Observer::new(model, lfs), x0, horizon, dt)
}

/// `ṙ = A r` from `r0` on the same grid as [`integrate`].
pub fn simulate_cs(
    a: &DenseMatrix,
    r0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<Vec<Vec<f64>>, SimError> {
    if !a.is_square() || a.rows() != r0.len() {
        return Err(SimError::Dimension(format!(
            "{}x{} matrix, {} states",
            a.rows(),
            a.cols(),
            r0.len()
        )));
    }
    let steps = check_grid(horizon, dt)?;
    let h = horizon / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    let f = |r: &[f64], o: &mut [f64]| {
        for (i, oi) in o.iter_mut().enumerate() {
            *oi = crate::linalg::dot(a.row(i), r);
        }
    };
    rk4(f, r0, h, steps, |_, r| {
        out.push(r.to_vec());
        Ok(())
    })?;
    Ok(out)
}

/// A point of `{V = level}` for subsystem `lf`, in local coordinates.
///
/// A Gaussian direction normalized to the unit sphere is mapped through
/// `L⁻ᵀ`, where `L Lᵀ` is the form of `V`, and then rescaled onto the
/// level.
pub fn sample_level_set(
    lf: &LyapunovCertificate,
    level: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, SimError> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(SimError::InvalidLevel(level));
    }
    let m = lf.form();
    let d = m.rows();
    let linv_t = lower_inverse(&cholesky(&m)?)?.transpose();
    let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let nu = norm(&u);
    if nu == 0.0 {
        u[0] = 1.0;
    } else {
        u.iter_mut().for_each(|v| *v /= nu);
    }
    let mut x = linv_t.matvec(&u)?;
    x.iter_mut().for_each(|v| *v *= level.sqrt());
    let s = (level / lf.eval_local(&x)).sqrt();
    x.iter_mut().for_each(|v| *v *= s);
    Ok(x)
}

/// `ψ_ij(0, T) = ∫|φ_ij| dt` by the trapezoidal rule, per edge.
pub fn measure_flows(traj: &Trajectory) -> Vec<f64> {
    let e = traj.edges.len();
    let mut psi = vec![0.0; e];
    for k in 1..traj.t.len() {
        let h = traj.t[k] - traj.t[k - 1];
        for (j, p) in psi.iter_mut().enumerate() {
            *p += 0.5 * h * (traj.phi[k - 1][j].abs() + traj.phi[k][j].abs());
        }
    }
    psi
}

/// Settings of [`validate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ValidationConfig {
    pub samples: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            samples: 50,
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
            seed: 0,
        }
    }
}

/// Worst observations on one edge.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeReport {
    pub target: usize,
    pub source: usize,
    /// Largest `ψ − (bound·(1 + 1e-6) + tol)` over samples that stay in D.
    pub worst_margin: f64,
    pub max_flow: f64,
    pub max_tail_bound: f64,
    pub violations: usize,
}

/// Outcome of one simulated sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleReport {
    pub index: usize,
    pub levels: Vec<f64>,
    /// Grid time of the first exit from D.
    pub exit_time: Option<f64>,
    pub comparison_margin: f64,
    pub comparison_violations: usize,
    pub energy_violations: usize,
    pub halving_error: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub config: ValidationConfig,
    pub tol_cmp: f64,
    /// Largest `V_i(t) − r_i(t)` before a D-exit, per node.
    pub node_margins: Vec<f64>,
    pub edges: Vec<EdgeReport>,
    pub comparison_violations: usize,
    pub energy_violations: usize,
    pub exits: usize,
    pub blowups: usize,
    pub max_halving_error: f64,
    pub comparison_pass: bool,
    pub energy_pass: bool,
    pub pass: bool,
    pub samples: Vec<SampleReport>,
}

impl ValidationReport {
    pub fn to_json(&self) -> String {
        crate::canonical_json(self)
    }
}

/// `1e-6 + 10·dt²`.
pub fn comparison_tolerance(dt: f64) -> f64 {
    1e-6 + 10.0 * dt * dt
}

struct SampleOutcome {
    report: SampleReport,
    node_margins: Vec<f64>,
    edge_margins: Vec<(f64, f64, f64, bool)>,
    blowup: bool,
}

/// Initial state with `V_i(x_i(0))` uniform in `(0.05·γ_i, γ_i]`.
pub fn sample_initial_state(
    model: &NetworkModel,
    lfs: &[LyapunovCertificate],
    gamma: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>), SimError> {
    let mut x = vec![0.0; model.n()];
    let mut levels = Vec::with_capacity(model.m());
    let unit = Uniform::new_inclusive(0.05, 1.0).expect("valid range");
    for (i, lf) in lfs.iter().enumerate() {
        let level = gamma[i] * unit.sample(rng);
        let xi = sample_level_set(lf, level, rng)?;
        for (v, val) in model.vars(i).zip(xi) {
            x[v] = val;
        }
        levels.push(level);
    }
    Ok((x, levels))
}

/// Trajectory-level check of the comparison principle and of the energy
/// bounds on `config.samples` random initial states in D.
///
/// `V_i(t) ≤ r_i(t) + tol` is asserted at grid times before the first exit
/// from D; energy bounds `−uᵀA⁻¹v(0)` are checked on samples that never
/// leave D. The matrix in `cm` is used as given, so a corrupted matrix can
/// be probed.
pub fn validate(
    model: &NetworkModel,
    lfs: &[LyapunovCertificate],
    cm: &ComparisonCertificate,
    flows: &[FlowBound],
    config: &ValidationConfig,
) -> Result<ValidationReport, SimError> {
    let m = model.m();
    if lfs.len() != m || cm.a.rows() != m || cm.gamma.len() != m {
        return Err(SimError::Dimension(format!(
            "{m} nodes, {} Lyapunov functions, {}x{} comparison matrix",
            lfs.len(),
            cm.a.rows(),
            cm.a.cols()
        )));
    }
    let tol = comparison_tolerance(config.dt);
    let obs = Observer::new(model, lfs);
    let flow_of: Vec<Option<&FlowBound>> = obs
        .edges
        .iter()
        .map(|&(t, s)| flows.iter().find(|f| f.target == t && f.source == s))
        .collect();
    let outcomes: Vec<SampleOutcome> = (0..config.samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(k as u64);
            let (x0, levels) = sample_initial_state(model, lfs, &cm.gamma, &mut rng)?;
            Ok(check_sample(
                &obs, cm, &flow_of, k, &x0, levels, config, tol,
            ))
        })
        .collect::<Result<_, SimError>>()?;

    let mut node_margins = vec![f64::NEG_INFINITY; m];
    let mut edges: Vec<EdgeReport> = obs
        .edges
        .iter()
        .map(|&(target, source)| EdgeReport {
            target,
            source,
            worst_margin: f64::NEG_INFINITY,
            max_flow: 0.0,
            max_tail_bound: 0.0,
            violations: 0,
        })
        .collect();
    let mut samples = Vec::with_capacity(outcomes.len());
    let (mut exits, mut blowups) = (0, 0);
    for o in outcomes {
        for (a, b) in node_margins.iter_mut().zip(&o.node_margins) {
            *a = a.max(*b);
        }
        for (e, &(margin, flow, tail, bad)) in edges.iter_mut().zip(&o.edge_margins) {
            e.worst_margin = e.worst_margin.max(margin);
            e.max_flow = e.max_flow.max(flow);
            e.max_tail_bound = e.max_tail_bound.max(tail);
            e.violations += usize::from(bad);
        }
        exits += usize::from(o.report.exit_time.is_some());
        blowups += usize::from(o.blowup);
        samples.push(o.report);
    }
    let comparison_violations = samples.iter().map(|s| s.comparison_violations).sum();
    let energy_violations = samples.iter().map(|s| s.energy_violations).sum();
    let max_halving_error = samples.iter().map(|s| s.halving_error).fold(0.0, f64::max);
    let comparison_pass = comparison_violations == 0 && blowups == 0;
    let energy_pass = energy_violations == 0 && blowups == 0;
    Ok(ValidationReport {
        config: *config,
        tol_cmp: tol,
        node_margins,
        edges,
        comparison_violations,
        energy_violations,
        exits,
        blowups,
        max_halving_error,
        comparison_pass,
        energy_pass,
        pass: comparison_pass && energy_pass,
        samples,
    })
}

#[allow(clippy::too_many_arguments)]
fn check_sample(
    obs: &Observer,
    cm: &ComparisonCertificate,
    flow_of: &[Option<&FlowBound>],
    index: usize,
    x0: &[f64],
    levels: Vec<f64>,
    config: &ValidationConfig,
    tol: f64,
) -> SampleOutcome {
    let m = cm.a.rows();
    let ne = obs.edges.len();
    let mut report = SampleReport {
        index,
        levels,
        exit_time: None,
        comparison_margin: f64::NEG_INFINITY,
        comparison_violations: 0,
        energy_violations: 0,
        halving_error: 0.0,
        error: None,
    };
    let mut node_margins = vec![f64::NEG_INFINITY; m];
    let mut edge_margins = vec![(f64::NEG_INFINITY, 0.0, 0.0, false); ne];
    let (tr, blowup) = match run_until_blowup(obs, x0, config.horizon, config.dt) {
        Ok((t, b)) => (t, b.map(|e| e.to_string())),
        Err(e) => (
            Trajectory {
                t: Vec::new(),
                x: Vec::new(),
                v: Vec::new(),
                edges: Vec::new(),
                phi: Vec::new(),
                halving_error: 0.0,
            },
            Some(e.to_string()),
        ),
    };
    if tr.v.is_empty() {
        report.error = blowup;
        return SampleOutcome {
            report,
            node_margins,
            edge_margins,
            blowup: true,
        };
    }
    report.halving_error = tr.halving_error;
    let v0 = tr.v[0].clone();
    let r = match simulate_cs(&cm.a, &v0, config.horizon, config.dt) {
        Ok(r) => r,
        Err(e) => {
            report.error = Some(e.to_string());
            return SampleOutcome {
                report,
                node_margins,
                edge_margins,
                blowup: false,
            };
        }
    };
    for (k, v) in tr.v.iter().enumerate() {
        if v.iter().zip(&cm.gamma).any(|(vi, g)| vi > g) {
            report.exit_time = Some(tr.t[k]);
            break;
        }
        for i in 0..m {
            let d = v[i] - r[k][i];
            node_margins[i] = node_margins[i].max(d);
            report.comparison_margin = report.comparison_margin.max(d);
            if d > tol {
                report.comparison_violations += 1;
            }
        }
    }
    if blowup.is_some() {
        report.error = blowup;
        return SampleOutcome {
            report,
            node_margins,
            edge_margins,
            blowup: true,
        };
    }
    if report.exit_time.is_none() {
        let psi = measure_flows(&tr);
        let vt = tr.v.last().expect("grid has points");
        let rhs0: Vec<f64> = v0.iter().map(|v| -v).collect();
        let rhst: Vec<f64> = vt.iter().map(|v| -v).collect();
        let (b0, bt) = match (solve_linear(&cm.a, &rhs0), solve_linear(&cm.a, &rhst)) {
            (Ok(b0), Ok(bt)) => (b0, bt),
            _ => {
                report.error = Some("comparison matrix is singular".into());
                return SampleOutcome {
                    report,
                    node_margins,
                    edge_margins,
                    blowup: false,
                };
            }
        };
        for (j, fb) in flow_of.iter().enumerate() {
            let Some(fb) = fb else { continue };
            let bound: f64 = fb.u.iter().zip(&b0).map(|(u, b)| u * b).sum();
            let tail: f64 = fb.u.iter().zip(&bt).map(|(u, b)| u * b).sum();
            let margin = psi[j] - (bound * (1.0 + BOUND_REL_TOL) + BOUND_ABS_TOL);
            let bad = margin > 0.0;
            report.energy_violations += usize::from(bad);
            edge_margins[j] = (margin, psi[j], tail, bad);
        }
    }
    SampleOutcome {
        report,
        node_margins,
        edge_margins,
        blowup: false,
    }
}
