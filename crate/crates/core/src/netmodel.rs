//! Polynomial network models: subsystems with isolated dynamics `f_i`,
//! additive couplings `g_ij`, the JSON file format and the two benchmark
//! generators.
//!
//! All polynomials live in the global state space: subsystem `i` owns the
//! contiguous variable range [`NetworkModel::vars`], and polynomial strings
//! in files use global indices.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{solve_linear, LinalgError};
use crate::polyalg::PolyError;
use crate::{DenseMatrix, Polynomial};

/// Field residual accepted by [`shift_equilibrium`].
pub const EQUILIBRIUM_TOL: f64 = 1e-8;
const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 100;
/// Interaction coefficients of the Lotka-Volterra benchmark are drawn from
/// [0.05, 0.5] and multiplied by this.
pub const LV_COUPLING_SCALE: f64 = 0.3;
/// Redraws tried by [`build_lotka_volterra`].
pub const LV_MAX_ATTEMPTS: u64 = 1000;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("f of subsystem {subsystem}, component {component}, is not zero at the origin")]
    FNotZeroAtOrigin { subsystem: usize, component: usize },
    #[error("g of coupling {target} <- {neighbor}, component {component}, has a term without source variables")]
    GNotZeroAtSourceZero {
        target: usize,
        neighbor: usize,
        component: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("not an equilibrium: field residual {0:e}")]
    NotAnEquilibrium(f64),
    #[error("equilibrium not found: residual {residual:e} after {iterations} Newton steps")]
    EquilibriumNotFound { iterations: usize, residual: f64 },
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsystemDef {
    pub id: usize,
    pub dim: usize,
    pub f: Vec<Polynomial>,
}

/// Interaction `g_ij` entering the dynamics of `target` (i) from `source` (j).
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingDef {
    pub target: usize,
    pub source: usize,
    pub g: Vec<Polynomial>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub seed: Option<u64>,
    pub generator: String,
    /// Original coordinates of the origin, when the model was shifted.
    pub equilibrium: Vec<f64>,
}

/// Validated network `ẋ_i = f_i(x_i) + Σ_j g_ij(x_i, x_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    subsystems: Vec<SubsystemDef>,
    couplings: Vec<CouplingDef>,
    pub meta: ModelMeta,
    offsets: Vec<usize>,
    n: usize,
}

impl NetworkModel {
    /// Validates and indexes a model. Couplings are stored sorted by
    /// (target, source).
    pub fn new(
        subsystems: Vec<SubsystemDef>,
        mut couplings: Vec<CouplingDef>,
        meta: ModelMeta,
    ) -> Result<Self, NetError> {
        if subsystems.is_empty() {
            return Err(NetError::Schema("model has no subsystems".into()));
        }
        let mut offsets = Vec::with_capacity(subsystems.len());
        let mut n = 0;
        for (k, s) in subsystems.iter().enumerate() {
            if s.id != k {
                return Err(NetError::Schema(format!(
                    "subsystem at position {k} has id {}",
                    s.id
                )));
            }
            if s.dim == 0 {
                return Err(NetError::DimensionMismatch(format!(
                    "subsystem {k} has dimension 0"
                )));
            }
            if s.f.len() != s.dim {
                return Err(NetError::DimensionMismatch(format!(
                    "subsystem {k} has dim {} but {} components in f",
                    s.dim,
                    s.f.len()
                )));
            }
            offsets.push(n);
            n += s.dim;
        }
        couplings.sort_by_key(|c| (c.target, c.source));
        let model = Self {
            subsystems,
            couplings,
            meta,
            offsets,
            n,
        };
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<(), NetError> {
        let m = self.m();
        for s in &self.subsystems {
            let own: Vec<usize> = self.vars(s.id).collect();
            for (c, p) in s.f.iter().enumerate() {
                self.check_poly(p, &own, &format!("f of subsystem {}", s.id))?;
                if p.constant_term() != 0.0 {
                    return Err(NetError::FNotZeroAtOrigin {
                        subsystem: s.id,
                        component: c,
                    });
                }
            }
        }
        let mut seen = BTreeSet::new();
        for cp in &self.couplings {
            if cp.target >= m || cp.source >= m {
                return Err(NetError::Schema(format!(
                    "coupling {} <- {} references a missing subsystem",
                    cp.target, cp.source
                )));
            }
            if cp.target == cp.source {
                return Err(NetError::Schema(format!(
                    "self coupling on subsystem {}",
                    cp.target
                )));
            }
            if !seen.insert((cp.target, cp.source)) {
                return Err(NetError::Schema(format!(
                    "duplicate coupling {} <- {}",
                    cp.target, cp.source
                )));
            }
            if cp.g.len() != self.subsystems[cp.target].dim {
                return Err(NetError::DimensionMismatch(format!(
                    "coupling {} <- {} has {} components for a {}-dimensional target",
                    cp.target,
                    cp.source,
                    cp.g.len(),
                    self.subsystems[cp.target].dim
                )));
            }
            let src: Vec<usize> = self.vars(cp.source).collect();
            let allowed: Vec<usize> = self.vars(cp.target).chain(self.vars(cp.source)).collect();
            for (c, p) in cp.g.iter().enumerate() {
                self.check_poly(
                    p,
                    &allowed,
                    &format!("g of coupling {} <- {}", cp.target, cp.source),
                )?;
                if p.terms().any(|(mono, _)| !mono.contains_any(&src)) {
                    return Err(NetError::GNotZeroAtSourceZero {
                        target: cp.target,
                        neighbor: cp.source,
                        component: c,
                    });
                }
            }
        }
        Ok(())
    }

    fn check_poly(&self, p: &Polynomial, allowed: &[usize], what: &str) -> Result<(), NetError> {
        if p.nvars() != self.n {
            return Err(NetError::DimensionMismatch(format!(
                "{what} has {} variables, model has {}",
                p.nvars(),
                self.n
            )));
        }
        if let Some(v) = p.variables().into_iter().find(|v| !allowed.contains(v)) {
            return Err(NetError::DimensionMismatch(format!(
                "{what} uses foreign variable x{v}"
            )));
        }
        Ok(())
    }

    /// Total state dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of subsystems.
    pub fn m(&self) -> usize {
        self.subsystems.len()
    }

    pub fn subsystems(&self) -> &[SubsystemDef] {
        &self.subsystems
    }

    pub fn subsystem(&self, i: usize) -> &SubsystemDef {
        &self.subsystems[i]
    }

    pub fn couplings(&self) -> &[CouplingDef] {
        &self.couplings
    }

    pub fn coupling(&self, target: usize, source: usize) -> Option<&CouplingDef> {
        self.couplings
            .binary_search_by_key(&(target, source), |c| (c.target, c.source))
            .ok()
            .map(|k| &self.couplings[k])
    }

    /// Couplings whose target is `i`.
    pub fn couplings_into(&self, i: usize) -> impl Iterator<Item = &CouplingDef> {
        self.couplings.iter().filter(move |c| c.target == i)
    }

    /// Directed edges `(target, source)` in sorted order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.couplings
            .iter()
            .map(|c| (c.target, c.source))
            .collect()
    }

    /// Global variable indices of subsystem `i`.
    pub fn vars(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i] + self.subsystems[i].dim
    }

    /// Subsystem owning global variable `v`.
    pub fn owner(&self, v: usize) -> usize {
        self.offsets.partition_point(|&o| o <= v) - 1
    }

    /// `N_i`: `i` together with every source coupled into it, sorted.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: BTreeSet<usize> = self.couplings_into(i).map(|c| c.source).collect();
        out.insert(i);
        out.into_iter().collect()
    }

    /// Global variables of every subsystem in `N_i`.
    pub fn neighbor_vars(&self, i: usize) -> Vec<usize> {
        self.neighbors(i)
            .into_iter()
            .flat_map(|j| self.vars(j))
            .collect()
    }

    /// Right-hand side of subsystem `i`: `f_i + Σ_j g_ij`.
    pub fn node_field(&self, i: usize) -> Vec<Polynomial> {
        let mut out = self.subsystems[i].f.clone();
        for c in self.couplings_into(i) {
            for (o, g) in out.iter_mut().zip(&c.g) {
                *o = &*o + g;
            }
        }
        out
    }

    /// The full vector field `F`, indexed by global variable.
    pub fn field(&self) -> Vec<Polynomial> {
        (0..self.m()).flat_map(|i| self.node_field(i)).collect()
    }

    /// `F(x)`.
    pub fn eval_field(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        self.field()
            .iter()
            .map(|p| p.eval(x).map_err(NetError::from))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            subsystems: self
                .subsystems
                .iter()
                .map(|s| SubsystemFile {
                    id: s.id,
                    dim: s.dim,
                    f: s.f.iter().map(|p| p.to_string()).collect(),
                })
                .collect(),
            couplings: self
                .couplings
                .iter()
                .map(|c| CouplingFile {
                    target: c.target,
                    source: c.source,
                    g: c.g.iter().map(|p| p.to_string()).collect(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        crate::canonical_json(&file)
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| NetError::Schema(e.to_string()))?;
        let n: usize = file.subsystems.iter().map(|s| s.dim).sum();
        let parse = |s: &str| Polynomial::parse(s, n).map_err(|e| NetError::Schema(e.to_string()));
        let subsystems = file
            .subsystems
            .iter()
            .map(|s| {
                Ok(SubsystemDef {
                    id: s.id,
                    dim: s.dim,
                    f: s.f
                        .iter()
                        .map(|t| parse(t))
                        .collect::<Result<_, NetError>>()?,
                })
            })
            .collect::<Result<Vec<_>, NetError>>()?;
        let couplings = file
            .couplings
            .iter()
            .map(|c| {
                Ok(CouplingDef {
                    target: c.target,
                    source: c.source,
                    g: c.g
                        .iter()
                        .map(|t| parse(t))
                        .collect::<Result<_, NetError>>()?,
                })
            })
            .collect::<Result<Vec<_>, NetError>>()?;
        Self::new(subsystems, couplings, file.meta)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    subsystems: Vec<SubsystemFile>,
    #[serde(default)]
    couplings: Vec<CouplingFile>,
    #[serde(default)]
    meta: ModelMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubsystemFile {
    id: usize,
    dim: usize,
    f: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingFile {
    target: usize,
    source: usize,
    g: Vec<String>,
}

/// Reads and validates a model file.
pub fn load(path: impl AsRef<Path>) -> Result<NetworkModel, NetError> {
    NetworkModel::from_json(&std::fs::read_to_string(path)?)
}

/// The two-node linear sample model shipped with the crate.
pub const TWO_NODE_LINEAR: &str = include_str!("../models/two_node_linear.json");

/// Moves the equilibrium `xstar` to the origin.
///
/// Terms of a shifted `g_ij` that no longer contain a source variable are
/// moved into `f_i`; constant terms (the field residual at `xstar`) are
/// dropped.
pub fn shift_equilibrium(model: &NetworkModel, xstar: &[f64]) -> Result<NetworkModel, NetError> {
    if xstar.len() != model.n() {
        return Err(NetError::DimensionMismatch(format!(
            "equilibrium has {} entries, model has {} states",
            xstar.len(),
            model.n()
        )));
    }
    let residual = model
        .eval_field(xstar)?
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if !(residual <= EQUILIBRIUM_TOL) {
        return Err(NetError::NotAnEquilibrium(residual));
    }
    let mut f: Vec<Vec<Polynomial>> = model
        .subsystems
        .iter()
        .map(|s| {
            s.f.iter()
                .map(|p| p.substitute(xstar))
                .collect::<Result<_, _>>()
        })
        .collect::<Result<_, _>>()?;
    let mut couplings = Vec::with_capacity(model.couplings.len());
    for c in &model.couplings {
        let src: Vec<usize> = model.vars(c.source).collect();
        let mut g = Vec::with_capacity(c.g.len());
        for (k, p) in c.g.iter().enumerate() {
            let (keep, local) = p.substitute(xstar)?.split_by_vars(&src);
            f[c.target][k] = &f[c.target][k] + &local;
            g.push(keep);
        }
        couplings.push(CouplingDef {
            target: c.target,
            source: c.source,
            g,
        });
    }
    let subsystems = model
        .subsystems
        .iter()
        .zip(f)
        .map(|(s, fs)| SubsystemDef {
            id: s.id,
            dim: s.dim,
            f: fs.into_iter().map(|p| p.truncate_below(1)).collect(),
        })
        .collect();
    let base = if model.meta.equilibrium.len() == model.n() {
        model.meta.equilibrium.clone()
    } else {
        vec![0.0; model.n()]
    };
    let meta = ModelMeta {
        equilibrium: base.iter().zip(xstar).map(|(a, b)| a + b).collect(),
        ..model.meta.clone()
    };
    NetworkModel::new(subsystems, couplings, meta)
}

/// Damped Newton iteration for `F(x) = 0` started at `x0`.
pub fn find_equilibrium(model: &NetworkModel, x0: &[f64]) -> Result<Vec<f64>, NetError> {
    let field = model.field();
    let n = field.len();
    let jac: Vec<Vec<Polynomial>> = field.iter().map(|p| p.grad()).collect();
    let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let norm2 = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let eval = |x: &[f64]| -> Result<Vec<f64>, NetError> {
        field
            .iter()
            .map(|p| p.eval(x).map_err(NetError::from))
            .collect()
    };
    let mut x = x0.to_vec();
    let mut fx = eval(&x)?;
    for _ in 0..NEWTON_MAX_ITER {
        if norm(&fx) <= NEWTON_TOL {
            return Ok(x);
        }
        let mut j = DenseMatrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                j[(r, c)] = jac[r][c].eval(&x)?;
            }
        }
        let rhs: Vec<f64> = fx.iter().map(|v| -v).collect();
        let dx = match solve_linear(&j, &rhs) {
            Ok(d) => d,
            Err(LinalgError::SingularMatrix) => break,
            Err(e) => return Err(NetError::DimensionMismatch(e.to_string())),
        };
        let f0 = norm2(&fx);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + t * d).collect();
            let ft = eval(&trial)?;
            if norm2(&ft) < (1.0 - 1e-4 * t) * f0 || t < 1e-8 {
                x = trial;
                fx = ft;
                break;
            }
            t *= 0.5;
        }
    }
    let residual = norm(&fx);
    if residual <= NEWTON_TOL {
        return Ok(x);
    }
    Err(NetError::EquilibriumNotFound {
        iterations: NEWTON_MAX_ITER,
        residual,
    })
}

/// Connected undirected graph: a ring plus `n / 2` random chords, as sorted
/// pairs `(a, b)` with `a < b`.
pub fn ring_with_chords(n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges = BTreeSet::new();
    if n >= 2 {
        for i in 0..n {
            let j = (i + 1) % n;
            if i != j {
                edges.insert((i.min(j), i.max(j)));
            }
        }
    }
    let mut free: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
        .filter(|e| !edges.contains(e))
        .collect();
    free.shuffle(rng);
    edges.extend(free.into_iter().take(n / 2));
    edges.into_iter().collect()
}

/// One directed Lotka-Volterra interaction `x_j (c_ij + d_ij x_i)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LvInteraction {
    pub target: usize,
    pub source: usize,
    pub c: f64,
    pub d: f64,
}

/// Coefficients of `ẋ_i = (b_i − x_i) x_i − Σ_j x_j (c_ij + d_ij x_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LvParams {
    pub b: Vec<f64>,
    pub interactions: Vec<LvInteraction>,
}

/// Seeded benchmark coefficients; both directions of every undirected edge
/// get independent `c`, `d`.
pub fn lv_params(n: usize, seed: u64) -> LvParams {
    lv_params_attempt(n, seed, 0)
}

/// Draw number `attempt` for `seed`, from an independent stream of the
/// same generator.
pub fn lv_params_attempt(n: usize, seed: u64, attempt: u64) -> LvParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(attempt);
    let edges = ring_with_chords(n, &mut rng);
    let b = (0..n).map(|_| rng.random_range(1.5..=2.5)).collect();
    let mut interactions = Vec::with_capacity(2 * edges.len());
    for &(a, c) in &edges {
        for (target, source) in [(a, c), (c, a)] {
            interactions.push(LvInteraction {
                target,
                source,
                c: LV_COUPLING_SCALE * rng.random_range(0.05..=0.5),
                d: LV_COUPLING_SCALE * rng.random_range(0.05..=0.5),
            });
        }
    }
    LvParams { b, interactions }
}

/// The Lotka-Volterra network in population coordinates.
pub fn lotka_volterra_raw(params: &LvParams) -> Result<NetworkModel, NetError> {
    let n = params.b.len();
    let x = |i: usize| Polynomial::var(n, i);
    let mut subsystems = Vec::with_capacity(n);
    for (i, &b) in params.b.iter().enumerate() {
        let xi = x(i)?;
        let f = &(&Polynomial::constant(n, b) - &xi) * &xi;
        subsystems.push(SubsystemDef {
            id: i,
            dim: 1,
            f: vec![f],
        });
    }
    let mut couplings = Vec::with_capacity(params.interactions.len());
    for it in &params.interactions {
        let xj = x(it.source)?;
        let inner = &Polynomial::constant(n, it.c) + &x(it.target)?.scale(it.d);
        couplings.push(CouplingDef {
            target: it.target,
            source: it.source,
            g: vec![-&(&xj * &inner)],
        });
    }
    NetworkModel::new(
        subsystems,
        couplings,
        ModelMeta {
            seed: None,
            generator: "lotka_volterra".into(),
            equilibrium: Vec::new(),
        },
    )
}

/// Builds the network from `params`, finds the positive equilibrium and
/// shifts it to the origin.
///
/// The equilibrium is tracked from the uncoupled one (`x = b`) by damped
/// Newton while the interaction coefficients are ramped up from zero.
pub fn lotka_volterra(params: &LvParams) -> Result<NetworkModel, NetError> {
    let raw = lotka_volterra_raw(params)?;
    let mut x = params.b.clone();
    let mut lambda = 0.0f64;
    let mut h = 0.25f64;
    while lambda < 1.0 {
        let next = (lambda + h).min(1.0);
        match lv_newton(params, next, &x) {
            Some(xn) if xn.iter().all(|&v| v > 0.0) => {
                x = xn;
                lambda = next;
                h = (2.0 * h).min(0.5);
            }
            _ => {
                h *= 0.5;
                if h < 1e-4 {
                    let residual = raw
                        .eval_field(&x)?
                        .iter()
                        .fold(0.0f64, |m, v| m.max(v.abs()));
                    return Err(NetError::EquilibriumNotFound {
                        iterations: NEWTON_MAX_ITER,
                        residual,
                    });
                }
            }
        }
    }
    shift_equilibrium(&raw, &x)
}

/// Damped Newton on the Lotka-Volterra field with interactions scaled by
/// `lambda`.
fn lv_newton(p: &LvParams, lambda: f64, x0: &[f64]) -> Option<Vec<f64>> {
    let n = p.b.len();
    let rhs = |x: &[f64]| -> Vec<f64> {
        let mut out: Vec<f64> = p.b.iter().zip(x).map(|(b, xi)| (b - xi) * xi).collect();
        for it in &p.interactions {
            out[it.target] -= lambda * x[it.source] * (it.c + it.d * x[it.target]);
        }
        out
    };
    let norm2 = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut x = x0.to_vec();
    let mut fx = rhs(&x);
    for _ in 0..NEWTON_MAX_ITER {
        if fx.iter().all(|v| v.abs() <= NEWTON_TOL) {
            return Some(x);
        }
        let mut j = DenseMatrix::zeros(n, n);
        for i in 0..n {
            j[(i, i)] = p.b[i] - 2.0 * x[i];
        }
        for it in &p.interactions {
            j[(it.target, it.target)] -= lambda * it.d * x[it.source];
            j[(it.target, it.source)] -= lambda * (it.c + it.d * x[it.target]);
        }
        let dx = solve_linear(&j, &fx.iter().map(|v| -v).collect::<Vec<_>>()).ok()?;
        let f0 = norm2(&fx);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + t * d).collect();
            let ft = rhs(&trial);
            if norm2(&ft) < (1.0 - 1e-4 * t) * f0 {
                x = trial;
                fx = ft;
                break;
            }
            t *= 0.5;
            if t < 1e-8 {
                return None;
            }
        }
    }
    fx.iter().all(|v| v.abs() <= NEWTON_TOL).then_some(x)
}

/// Seeded Lotka-Volterra benchmark with `n` communities, shifted to the
/// origin.
///
/// Draws whose equilibrium cannot be found, or has a community that is not
/// locally stable on its own, are redrawn from the next stream of the same
/// seed; [`LV_MAX_ATTEMPTS`] bounds the search.
pub fn build_lotka_volterra(n: usize, seed: u64) -> Result<NetworkModel, NetError> {
    lv_benchmark(n, seed).map(|(_, m)| m)
}

/// [`build_lotka_volterra`] together with the coefficients of the accepted
/// draw.
pub fn lv_benchmark(n: usize, seed: u64) -> Result<(LvParams, NetworkModel), NetError> {
    if n < 2 {
        return Err(NetError::Schema(
            "Lotka-Volterra network needs at least 2 nodes".into(),
        ));
    }
    let mut last = None;
    for attempt in 0..LV_MAX_ATTEMPTS {
        let params = lv_params_attempt(n, seed, attempt);
        match lotka_volterra(&params) {
            Ok(mut model) if isolated_nodes_stable(&model) && linear_comparison_hurwitz(&model) => {
                model.meta.seed = Some(seed);
                return Ok((params, model));
            }
            Ok(_) => {}
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or(NetError::EquilibriumNotFound {
        iterations: NEWTON_MAX_ITER,
        residual: f64::NAN,
    }))
}

/// Every scalar subsystem has a negative linear coefficient.
fn isolated_nodes_stable(model: &NetworkModel) -> bool {
    model.subsystems().iter().all(|s| {
        let v = model.vars(s.id).start;
        s.dim == 1 && s.f[0].coeff(&crate::Monomial::var(v)) < 0.0
    })
}

/// Hurwitz test of the comparison matrix that region-scaled quadratic
/// Lyapunov functions give in the small-signal limit.
///
/// For a scalar node `ż = -a z + β z² + …` the scaled function is
/// `(β/a)² z²`, so a linear coupling `J_ij z_j` contributes
/// `|J_ij|·(|β_i| a_j)/(a_i |β_j|)` to both `a_ii` and `a_ij`.
fn linear_comparison_hurwitz(model: &NetworkModel) -> bool {
    use crate::Monomial;
    let m = model.m();
    let lin = |i: usize| -model.subsystem(i).f[0].coeff(&Monomial::var(model.vars(i).start));
    let quad = |i: usize| {
        model.subsystem(i).f[0]
            .coeff(&Monomial::var_pow(model.vars(i).start, 2))
            .abs()
    };
    if (0..m).any(|i| quad(i) == 0.0) {
        return true;
    }
    let mut a = DenseMatrix::zeros(m, m);
    for i in 0..m {
        a[(i, i)] = -2.0 * lin(i);
        for c in model.couplings_into(i) {
            let j = c.source;
            let w = c.g[0].coeff(&Monomial::var(model.vars(j).start)).abs() * quad(i) * lin(j)
                / (lin(i) * quad(j));
            a[(i, i)] += w;
            a[(i, j)] += w;
        }
    }
    crate::linalg::metzler_hurwitz(&a)
        .map(|v| v.is_hurwitz())
        .unwrap_or(false)
}

/// Per-node oscillator constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VdpNode {
    pub mu: f64,
    pub c2: f64,
}

/// Coupling `[0, β¹ x_j2 + β² x_j2 x_i1]` into `target` from `source`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VdpLink {
    pub target: usize,
    pub source: usize,
    pub beta1: f64,
    pub beta2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VdpParams {
    pub nodes: Vec<VdpNode>,
    pub links: Vec<VdpLink>,
}

impl VdpParams {
    /// `c¹_i = 1 − (c²_i / 2)²`.
    pub fn c1(&self, i: usize) -> f64 {
        let h = 0.5 * self.nodes[i].c2;
        1.0 - h * h
    }

    /// `c³_i = 1 − Σ_j (β²_ij c²_i / 2 − β¹_ij)`.
    pub fn c3(&self, i: usize) -> f64 {
        let c2 = self.nodes[i].c2;
        1.0 - self
            .links
            .iter()
            .filter(|l| l.target == i)
            .map(|l| 0.5 * l.beta2 * c2 - l.beta1)
            .sum::<f64>()
    }
}

pub fn vdp_params(m: usize, seed: u64) -> VdpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = ring_with_chords(m, &mut rng);
    let nodes = (0..m)
        .map(|_| VdpNode {
            mu: rng.random_range(0.3..=0.8),
            c2: rng.random_range(0.2..=0.6),
        })
        .collect();
    let mut links = Vec::with_capacity(2 * edges.len());
    for &(a, c) in &edges {
        for (target, source) in [(a, c), (c, a)] {
            links.push(VdpLink {
                target,
                source,
                beta1: rng.random_range(0.01..=0.1),
                beta2: rng.random_range(0.01..=0.1),
            });
        }
    }
    VdpParams { nodes, links }
}

/// Coupled oscillators with state `(x_i1, x_i2)` per node:
/// `ẋ_i1 = x_i2`, `ẋ_i2 = −μ_i x_i2 (c¹_i − c²_i x_i1 − x_i1²) − c³_i x_i1`.
///
/// The damping enters with a negative sign so that every node is locally
/// asymptotically stable at the origin.
pub fn vdp_network(params: &VdpParams) -> Result<NetworkModel, NetError> {
    let m = params.nodes.len();
    let n = 2 * m;
    let x = |v: usize| Polynomial::var(n, v);
    let mut subsystems = Vec::with_capacity(m);
    for (i, node) in params.nodes.iter().enumerate() {
        let (x1, x2) = (x(2 * i)?, x(2 * i + 1)?);
        let inner = &(&Polynomial::constant(n, params.c1(i)) - &x1.scale(node.c2)) - &(&x1 * &x1);
        let f2 = &(&x2 * &inner).scale(-node.mu) - &x1.scale(params.c3(i));
        subsystems.push(SubsystemDef {
            id: i,
            dim: 2,
            f: vec![x2, f2],
        });
    }
    let mut couplings = Vec::with_capacity(params.links.len());
    for l in &params.links {
        let xj2 = x(2 * l.source + 1)?;
        let xi1 = x(2 * l.target)?;
        let g2 = &xj2.scale(l.beta1) + &(&xj2 * &xi1).scale(l.beta2);
        couplings.push(CouplingDef {
            target: l.target,
            source: l.source,
            g: vec![Polynomial::zero(n), g2],
        });
    }
    NetworkModel::new(
        subsystems,
        couplings,
        ModelMeta {
            seed: None,
            generator: "van_der_pol".into(),
            equilibrium: vec![0.0; n],
        },
    )
}

/// Seeded network of `m` coupled oscillators.
pub fn build_vdp_network(m: usize, seed: u64) -> Result<NetworkModel, NetError> {
    if m < 2 {
        return Err(NetError::Schema(
            "oscillator network needs at least 2 nodes".into(),
        ));
    }
    let mut model = vdp_network(&vdp_params(m, seed))?;
    model.meta.seed = Some(seed);
    Ok(model)
}

/// Global index map: variable → (subsystem, local index).
pub fn variable_map(model: &NetworkModel) -> BTreeMap<usize, (usize, usize)> {
    (0..model.m())
        .flat_map(|i| model.vars(i).enumerate().map(move |(l, v)| (v, (i, l))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str, n: usize) -> Polynomial {
        Polynomial::parse(s, n).unwrap()
    }

    #[test]
    fn scalar_logistic_shift() {
        let m = NetworkModel::new(
            vec![SubsystemDef {
                id: 0,
                dim: 1,
                f: vec![p("x0 - x0^2", 1)],
            }],
            vec![],
            ModelMeta::default(),
        )
        .unwrap();
        let s = shift_equilibrium(&m, &[1.0]).unwrap();
        assert_eq!(s.subsystem(0).f[0], p("-x0 - x0^2", 1));
        assert_eq!(s.meta.equilibrium, vec![1.0]);
        assert_eq!(
            shift_equilibrium(&m, &[0.0]).unwrap().subsystem(0).f,
            m.subsystem(0).f
        );
    }

    #[test]
    fn constant_in_f_rejected() {
        let r = NetworkModel::new(
            vec![SubsystemDef {
                id: 0,
                dim: 1,
                f: vec![p("0.5 - x0", 1)],
            }],
            vec![],
            ModelMeta::default(),
        );
        assert!(matches!(
            r,
            Err(NetError::FNotZeroAtOrigin {
                subsystem: 0,
                component: 0
            })
        ));
    }

    #[test]
    fn pure_target_term_in_g_rejected() {
        let subs = vec![
            SubsystemDef {
                id: 0,
                dim: 1,
                f: vec![p("-x0", 2)],
            },
            SubsystemDef {
                id: 1,
                dim: 1,
                f: vec![p("-x1", 2)],
            },
        ];
        let g = vec![CouplingDef {
            target: 0,
            source: 1,
            g: vec![p("x1 + x0^2", 2)],
        }];
        assert!(matches!(
            NetworkModel::new(subs, g, ModelMeta::default()),
            Err(NetError::GNotZeroAtSourceZero {
                target: 0,
                neighbor: 1,
                ..
            })
        ));
    }

    #[test]
    fn ring_is_connected_with_extra_chords() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = ring_with_chords(16, &mut rng);
        assert_eq!(e.len(), 16 + 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(ring_with_chords(2, &mut rng), vec![(0, 1)]);
    }

    #[test]
    fn c1_formula() {
        let prm = VdpParams {
            nodes: vec![VdpNode { mu: 0.5, c2: 0.4 }],
            links: vec![],
        };
        assert!((prm.c1(0) - 0.96).abs() < 1e-15);
        assert_eq!(prm.c3(0), 1.0);
    }

    #[test]
    fn owner_lookup() {
        let m = build_vdp_network(3, 1).unwrap();
        assert_eq!(m.owner(0), 0);
        assert_eq!(m.owner(3), 1);
        assert_eq!(m.owner(5), 2);
    }
}
