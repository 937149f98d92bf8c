//! End-to-end decomposition runs: build or load a model, certify it, bound
//! the edge flows, partition the energy graph and validate by simulation.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::certify::{
    comparison_certificate, flow_bounds, lyapunov_certificates, CertifyError,
    ComparisonCertificate, FlowBound, LyapunovCertificate, DEFAULT_GAMMA,
};
use crate::flowgraph::{
    build_adjacency, cut_weight, matrix_to_csv, spectral_partition, to_dot, total_weight,
    AdjacencyMode, EnergyGraph, FlowGraphError, Partition,
};
use crate::netmodel::{build_lotka_volterra, build_vdp_network, load, NetError, NetworkModel};
use crate::simkit::{
    integrate, sample_initial_state, validate, SimError, ValidationConfig, ValidationReport,
    DEFAULT_DT, DEFAULT_HORIZON,
};
use crate::DenseMatrix;

/// Γ-halvings tried after an infeasible certificate.
pub const GAMMA_RETRIES: usize = 3;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid gamma: {0}")]
    InvalidGamma(String),
    #[error("invalid levels: {0}")]
    InvalidLevels(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] NetError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Graph(#[from] FlowGraphError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    Lv16,
    Vdp9,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    File(PathBuf),
    Builtin(Builtin),
}

impl ModelSource {
    /// `builtin:lv16`, `builtin:vdp9`, or a file path.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        match text.strip_prefix("builtin:") {
            Some("lv16") => Ok(Self::Builtin(Builtin::Lv16)),
            Some("vdp9") => Ok(Self::Builtin(Builtin::Vdp9)),
            Some(other) => Err(ScenarioError::Config(format!(
                "unknown builtin model `{other}`"
            ))),
            None => Ok(Self::File(PathBuf::from(text))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSpec {
    Uniform(f64),
    PerNode(Vec<f64>),
}

impl GammaSpec {
    /// A single number or a comma-separated list.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let vals = text
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ScenarioError::InvalidGamma(format!("`{text}`: {e}")))?;
        match vals.as_slice() {
            [g] => Ok(Self::Uniform(*g)),
            _ => Ok(Self::PerNode(vals)),
        }
    }

    pub fn resolve(&self, m: usize) -> Result<Vec<f64>, ScenarioError> {
        let g = match self {
            Self::Uniform(g) => vec![*g; m],
            Self::PerNode(v) if v.len() == m => v.clone(),
            Self::PerNode(v) => {
                return Err(ScenarioError::InvalidGamma(format!(
                    "{} levels for {m} nodes",
                    v.len()
                )));
            }
        };
        check_unit_interval(&g).map_err(ScenarioError::InvalidGamma)?;
        Ok(g)
    }
}

fn check_unit_interval(v: &[f64]) -> Result<(), String> {
    match v.iter().find(|g| !(**g > 0.0 && **g <= 1.0)) {
        Some(g) => Err(format!("{g} is outside (0, 1]")),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    WorstCase,
    /// Per-node initial levels `v(0)`.
    Initial(Vec<f64>),
}

/// Parses a JSON array of per-node levels.
pub fn parse_levels(text: &str) -> Result<Vec<f64>, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError::InvalidLevels(e.to_string()))
}

/// Parses a JSON array of level vectors.
pub fn parse_variants(text: &str) -> Result<Vec<Vec<f64>>, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError::InvalidLevels(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub model: ModelSource,
    pub seed: u64,
    pub gamma: GammaSpec,
    pub k: usize,
    pub mode: Mode,
    pub validation: ValidationConfig,
    /// Also export the trajectory of the first validation sample.
    pub trajectory: bool,
}

impl ScenarioConfig {
    pub fn new(model: ModelSource, seed: u64) -> Self {
        Self {
            model,
            seed,
            gamma: GammaSpec::Uniform(DEFAULT_GAMMA),
            k: 2,
            mode: Mode::WorstCase,
            validation: ValidationConfig {
                samples: 50,
                horizon: DEFAULT_HORIZON,
                dt: DEFAULT_DT,
                seed,
            },
            trajectory: false,
        }
    }

    /// Checks everything that does not need the model.
    pub fn check(&self) -> Result<(), ScenarioError> {
        match &self.gamma {
            GammaSpec::Uniform(g) => {
                check_unit_interval(&[*g]).map_err(ScenarioError::InvalidGamma)?
            }
            GammaSpec::PerNode(v) => check_unit_interval(v).map_err(ScenarioError::InvalidGamma)?,
        }
        if self.k == 0 {
            return Err(ScenarioError::Config(
                "cluster count must be at least 1".into(),
            ));
        }
        let v = &self.validation;
        if !(v.dt > 0.0 && v.horizon >= v.dt) {
            return Err(ScenarioError::Config(format!(
                "horizon {} and step {}",
                v.horizon, v.dt
            )));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<NetworkModel, ScenarioError> {
        Ok(match &self.model {
            ModelSource::File(p) => load(p)?,
            ModelSource::Builtin(Builtin::Lv16) => build_lotka_volterra(16, self.seed)?,
            ModelSource::Builtin(Builtin::Vdp9) => build_vdp_network(9, self.seed)?,
        })
    }
}

/// One certification attempt at a given domain.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaAttempt {
    pub gamma: Vec<f64>,
    pub outcome: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    NotHurwitz,
    ValidationFailed,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Success => 0,
            Self::NotHurwitz => 2,
            Self::ValidationFailed => 3,
        }
    }
}

/// Everything certified about a model at one domain.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certificates {
    pub attempts: Vec<GammaAttempt>,
    pub lyapunov: Vec<LyapunovCertificate>,
    pub comparison: ComparisonCertificate,
    /// Empty when the comparison matrix is not Hurwitz.
    pub flows: Vec<FlowBound>,
}

/// Lyapunov functions, then the comparison matrix and flow bounds with
/// Γ-halving on infeasible certificates.
pub fn certify_model(model: &NetworkModel, gamma: &[f64]) -> Result<Certificates, ScenarioError> {
    let lyapunov = lyapunov_certificates(model)?;
    let mut gamma = gamma.to_vec();
    let mut attempts = Vec::new();
    for attempt in 0..=GAMMA_RETRIES {
        let result = comparison_certificate(model, &lyapunov, &gamma).and_then(|cm| {
            if cm.hurwitz.is_hurwitz() {
                flow_bounds(model, &lyapunov, &gamma).map(|f| (cm, f))
            } else {
                Ok((cm, Vec::new()))
            }
        });
        match result {
            Ok((comparison, flows)) => {
                attempts.push(GammaAttempt {
                    gamma: gamma.clone(),
                    outcome: format!("{:?}", comparison.hurwitz),
                });
                return Ok(Certificates {
                    attempts,
                    lyapunov,
                    comparison,
                    flows,
                });
            }
            Err(e) if retryable(&e) && attempt < GAMMA_RETRIES => {
                attempts.push(GammaAttempt {
                    gamma: gamma.clone(),
                    outcome: e.to_string(),
                });
                gamma.iter_mut().for_each(|g| *g *= 0.5);
            }
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("the last attempt returns")
}

fn retryable(e: &CertifyError) -> bool {
    matches!(
        e,
        CertifyError::RowInfeasible { .. }
            | CertifyError::FlowInfeasible { .. }
            | CertifyError::NotProven { .. }
    )
}

/// Output files of a run, as text.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Artifacts {
    pub certificates: String,
    pub adjacency: Option<String>,
    pub partition: Option<String>,
    pub graph: Option<String>,
    pub validation: Option<String>,
    pub trajectory: Option<String>,
}

impl Artifacts {
    /// `(file name, contents)` of every produced artifact.
    pub fn files(&self) -> Vec<(&'static str, &str)> {
        let mut out = vec![("certificates.json", self.certificates.as_str())];
        let opt = [
            ("adjacency.csv", &self.adjacency),
            ("partition.json", &self.partition),
            ("graph.dot", &self.graph),
            ("validation.json", &self.validation),
            ("trajectory.csv", &self.trajectory),
        ];
        for (name, text) in opt {
            if let Some(t) = text {
                out.push((name, t.as_str()));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub model: NetworkModel,
    pub certificates: Certificates,
    pub adjacency: Option<DenseMatrix>,
    pub partition: Option<Partition>,
    pub validation: Option<ValidationReport>,
    pub artifacts: Artifacts,
}

#[derive(Serialize)]
struct CertificatesFile<'a> {
    config: &'a ScenarioConfig,
    model: serde_json::Value,
    #[serde(flatten)]
    certificates: &'a Certificates,
}

/// Runs the full pipeline for `config`.
pub fn run(config: &ScenarioConfig) -> Result<RunOutcome, ScenarioError> {
    config.check()?;
    let model = config.build_model()?;
    let gamma = config.gamma.resolve(model.m())?;
    if let Mode::Initial(levels) = &config.mode {
        if levels.len() != model.m() {
            return Err(ScenarioError::InvalidLevels(format!(
                "{} levels for {} nodes",
                levels.len(),
                model.m()
            )));
        }
        if let Some((i, _)) = levels
            .iter()
            .zip(&gamma)
            .enumerate()
            .find(|(_, (l, g))| !(**l >= 0.0 && l <= g))
        {
            return Err(ScenarioError::InvalidLevels(format!(
                "level of node {i} is not in [0, gamma]"
            )));
        }
    }
    if config.k > model.m() {
        return Err(ScenarioError::Config(format!(
            "{} clusters for {} nodes",
            config.k,
            model.m()
        )));
    }
    let certificates = certify_model(&model, &gamma)?;
    let certificates_json = crate::canonical_json(&CertificatesFile {
        config,
        model: serde_json::from_str(&model.to_json()).expect("model JSON parses"),
        certificates: &certificates,
    });
    let mut outcome = RunOutcome {
        status: RunStatus::NotHurwitz,
        model,
        certificates,
        adjacency: None,
        partition: None,
        validation: None,
        artifacts: Artifacts {
            certificates: certificates_json,
            ..Artifacts::default()
        },
    };
    let cert = &outcome.certificates;
    if !cert.comparison.hurwitz.is_hurwitz() {
        return Ok(outcome);
    }
    let graph = EnergyGraph::new(&cert.comparison, &cert.flows)?;
    let mode = match &config.mode {
        Mode::WorstCase => AdjacencyMode::WorstCase,
        Mode::Initial(l) => AdjacencyMode::Initial(l.clone()),
    };
    let w = build_adjacency(&graph, &mode)?;
    let partition = spectral_partition(&w, config.k, config.seed)?;
    let report = validate(
        &outcome.model,
        &cert.lyapunov,
        &cert.comparison,
        &cert.flows,
        &config.validation,
    )?;
    outcome.status = if report.pass {
        RunStatus::Success
    } else {
        RunStatus::ValidationFailed
    };
    outcome.artifacts.adjacency = Some(matrix_to_csv(&w));
    outcome.artifacts.partition = Some(partition.to_json());
    outcome.artifacts.graph = Some(to_dot(&w, &partition));
    outcome.artifacts.validation = Some(report.to_json());
    if config.trajectory && config.validation.samples > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.validation.seed);
        rng.set_stream(0);
        let (x0, _) = sample_initial_state(
            &outcome.model,
            &cert.lyapunov,
            &cert.comparison.gamma,
            &mut rng,
        )?;
        let traj = integrate(
            &outcome.model,
            &cert.lyapunov,
            &x0,
            config.validation.horizon,
            config.validation.dt,
        )?;
        outcome.artifacts.trajectory = Some(traj.to_csv());
    }
    outcome.adjacency = Some(w);
    outcome.partition = Some(partition);
    outcome.validation = Some(report);
    Ok(outcome)
}

/// Cut figures of one set of initial levels under the base partition.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantRow {
    pub levels: Vec<f64>,
    pub cut: f64,
    pub intra: f64,
    pub total: f64,
    /// `cut / intra` (infinite when there is no internal weight).
    pub cut_intra_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub gamma: Vec<f64>,
    pub base: VariantRow,
    pub partition: Partition,
    pub variants: Vec<VariantRow>,
}

impl CompareReport {
    pub fn to_json(&self) -> String {
        crate::canonical_json(self)
    }
}

fn variant_row(w: &DenseMatrix, partition: &Partition, levels: Vec<f64>) -> VariantRow {
    let cut = cut_weight(w, &partition.assignment);
    let total = total_weight(w);
    let intra = total - cut;
    VariantRow {
        levels,
        cut,
        intra,
        total,
        cut_intra_ratio: (intra > 0.0).then(|| cut / intra),
    }
}

/// Levels `high` on the nodes of one cluster and `low` elsewhere, one
/// variant per cluster.
pub fn cluster_variants(partition: &Partition, high: f64, low: f64) -> Vec<Vec<f64>> {
    partition
        .clusters()
        .iter()
        .map(|c| {
            (0..partition.assignment.len())
                .map(|i| if c.contains(&i) { high } else { low })
                .collect()
        })
        .collect()
}

/// Adjacency of each variant's initial levels, scored under the partition
/// of the worst-case graph.
pub fn compare_scenarios(
    model: &NetworkModel,
    certificates: &Certificates,
    k: usize,
    seed: u64,
    variants: &[Vec<f64>],
) -> Result<CompareReport, ScenarioError> {
    let cm = &certificates.comparison;
    let graph = EnergyGraph::new(cm, &certificates.flows)?;
    let w = build_adjacency(&graph, &AdjacencyMode::WorstCase)?;
    let partition = spectral_partition(&w, k, seed)?;
    let base = variant_row(&w, &partition, cm.gamma.clone());
    let mut rows = Vec::with_capacity(variants.len());
    for levels in variants {
        if levels.len() != model.m() {
            return Err(ScenarioError::InvalidLevels(format!(
                "{} levels for {} nodes",
                levels.len(),
                model.m()
            )));
        }
        if let Some(i) =
            (0..levels.len()).find(|&i| !(levels[i] >= 0.0 && levels[i] <= cm.gamma[i]))
        {
            return Err(ScenarioError::InvalidLevels(format!(
                "level of node {i} is not in [0, gamma]"
            )));
        }
        let wv = build_adjacency(&graph, &AdjacencyMode::Initial(levels.clone()))?;
        rows.push(variant_row(&wv, &partition, levels.clone()));
    }
    Ok(CompareReport {
        gamma: cm.gamma.clone(),
        base,
        partition,
        variants: rows,
    })
}
