//! Energy-flow bounds over a certified comparison system, the worst-case
//! similarity graph and normalized spectral partitioning.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::certify::{ComparisonCertificate, FlowBound};
use crate::linalg::{solve_linear, sym_eigen, LinalgError};
use crate::DenseMatrix;

/// K-means restarts per partition.
pub const KMEANS_RESTARTS: usize = 20;
const KMEANS_MAX_ITER: usize = 300;
/// Eigenvalue gap below which the embedding is reported as degenerate.
pub const EIGEN_GAP_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowGraphError {
    #[error("comparison matrix is not Hurwitz; energy bounds are unbounded")]
    NotHurwitz,
    #[error("cluster count {k} is not in 1..={m}")]
    InvalidClusterCount { k: usize, m: usize },
    #[error("negative entry {value:e} in {what}")]
    Negative { what: &'static str, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("eigenvector embedding is degenerate (gap {gap:e} after eigenvalue {k})")]
    DegenerateEmbedding { k: usize, gap: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One directed edge `target ← source` with its flow weights.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyEdge {
    pub target: usize,
    pub source: usize,
    pub u: Vec<f64>,
    /// Worst-case energy bound with `v(0) = Γ`.
    pub bound: f64,
}

/// Certified edges over a Hurwitz comparison matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyGraph {
    pub m: usize,
    pub a: DenseMatrix,
    pub gamma: Vec<f64>,
    pub edges: Vec<EnergyEdge>,
}

impl EnergyGraph {
    pub fn new(cm: &ComparisonCertificate, flows: &[FlowBound]) -> Result<Self, FlowGraphError> {
        if !cm.hurwitz.is_hurwitz() {
            return Err(FlowGraphError::NotHurwitz);
        }
        let m = cm.a.rows();
        let edges = flows
            .iter()
            .map(|f| {
                Ok(EnergyEdge {
                    target: f.target,
                    source: f.source,
                    u: f.u.clone(),
                    bound: edge_energy_bound(&f.u, &cm.a, &cm.gamma)?,
                })
            })
            .collect::<Result<Vec<_>, FlowGraphError>>()?;
        Ok(Self {
            m,
            a: cm.a.clone(),
            gamma: cm.gamma.clone(),
            edges,
        })
    }

    /// Sum of the `u` vectors of every edge.
    pub fn total_weights(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.m];
        for e in &self.edges {
            for (acc, u) in s.iter_mut().zip(&e.u) {
                *acc += u;
            }
        }
        s
    }
}

fn nonnegative(what: &'static str, v: &[f64]) -> Result<(), FlowGraphError> {
    match v.iter().find(|x| !(**x >= 0.0)) {
        Some(&value) => Err(FlowGraphError::Negative { what, value }),
        None => Ok(()),
    }
}

/// `-uᵀA⁻¹v0`: the energy that can cross an edge with weights `u`
/// starting from levels `v0`.
pub fn edge_energy_bound(u: &[f64], a: &DenseMatrix, v0: &[f64]) -> Result<f64, FlowGraphError> {
    if u.len() != a.rows() || v0.len() != a.rows() {
        return Err(FlowGraphError::Dimension(format!(
            "{} weights and {} levels for a {}x{} matrix",
            u.len(),
            v0.len(),
            a.rows(),
            a.cols()
        )));
    }
    nonnegative("u", u)?;
    nonnegative("v0", v0)?;
    let rhs: Vec<f64> = v0.iter().map(|v| -v).collect();
    let b = solve_linear(a, &rhs)?;
    Ok(u.iter().zip(&b).map(|(x, y)| x * y).sum())
}

/// Bound on the net energy flowing through every edge of the graph.
pub fn total_energy_bound(graph: &EnergyGraph, v0: &[f64]) -> Result<f64, FlowGraphError> {
    graph
        .edges
        .iter()
        .map(|e| edge_energy_bound(&e.u, &graph.a, v0))
        .sum()
}

/// Initial levels the adjacency is built from.
#[derive(Clone, Debug, PartialEq)]
pub enum AdjacencyMode {
    /// `v(0) = Γ`.
    WorstCase,
    /// Explicit `v(0)`.
    Initial(Vec<f64>),
}

/// Symmetric adjacency `w_ij = max(bound(i←j), bound(j←i))`.
pub fn build_adjacency(
    graph: &EnergyGraph,
    mode: &AdjacencyMode,
) -> Result<DenseMatrix, FlowGraphError> {
    let m = graph.m;
    let mut w = DenseMatrix::zeros(m, m);
    for e in &graph.edges {
        if e.target == e.source {
            continue;
        }
        let b = match mode {
            AdjacencyMode::WorstCase => e.bound,
            AdjacencyMode::Initial(v0) => edge_energy_bound(&e.u, &graph.a, v0)?,
        }
        .max(0.0);
        let (i, j) = (e.target, e.source);
        let v = w[(i, j)].max(b);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    Ok(w)
}

fn check_adjacency(w: &DenseMatrix) -> Result<(), FlowGraphError> {
    if !w.is_square() {
        return Err(FlowGraphError::Dimension(format!(
            "{}x{} adjacency",
            w.rows(),
            w.cols()
        )));
    }
    nonnegative("adjacency", w.as_slice())
}

fn inv_sqrt_degrees(w: &DenseMatrix) -> Vec<f64> {
    (0..w.rows())
        .map(|i| {
            let d: f64 = w.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect()
}

/// `I − D^{-1/2} W D^{-1/2}`; zero-degree nodes get `D^{-1/2} = 0`.
pub fn normalized_laplacian(w: &DenseMatrix) -> DenseMatrix {
    let s = inv_sqrt_degrees(w);
    let n = w.rows();
    let mut l = DenseMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - s[i] * w[(i, j)] * s[j]
    });
    l.symmetrize();
    l
}

/// Cluster assignment with its quality figures.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Partition {
    pub k: usize,
    /// Cluster of each node; labels follow the order of first appearance.
    pub assignment: Vec<usize>,
    pub cut: f64,
    /// Internal weight `Σ_{i<j}` of each cluster.
    pub internal: Vec<f64>,
    /// Ascending spectrum of the normalized Laplacian (advisory eigen-gap).
    pub eigenvalues: Vec<f64>,
    /// Within-cluster sum of squares of the best K-means run.
    pub inertia: f64,
    /// Set when the first `k` eigenvectors are not well separated from the
    /// rest, or the embedding is rank-deficient.
    pub degenerate: Option<String>,
}

impl Partition {
    /// Partition with given labels, scored on `w`.
    pub fn from_assignment(w: &DenseMatrix, assignment: Vec<usize>) -> Self {
        let assignment = relabel(&assignment);
        let k = assignment.iter().max().map_or(0, |c| c + 1);
        let mut internal = vec![0.0; k];
        for i in 0..assignment.len() {
            for j in i + 1..assignment.len() {
                if assignment[i] == assignment[j] {
                    internal[assignment[i]] += w[(i, j)];
                }
            }
        }
        Self {
            k,
            cut: cut_weight(w, &assignment),
            assignment,
            internal,
            eigenvalues: Vec::new(),
            inertia: 0.0,
            degenerate: None,
        }
    }

    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn to_json(&self) -> String {
        crate::canonical_json(self)
    }
}

fn relabel(assignment: &[usize]) -> Vec<usize> {
    let mut map = std::collections::BTreeMap::new();
    assignment
        .iter()
        .map(|c| {
            let next = map.len();
            *map.entry(*c).or_insert(next)
        })
        .collect()
}

/// `Σ_{i<j}` of `w_ij` over pairs in different clusters.
pub fn cut_weight(w: &DenseMatrix, assignment: &[usize]) -> f64 {
    let mut cut = 0.0;
    for i in 0..assignment.len() {
        for j in i + 1..assignment.len() {
            if assignment[i] != assignment[j] {
                cut += w[(i, j)];
            }
        }
    }
    cut
}

/// Sum of `w_ij` over `i < j`.
pub fn total_weight(w: &DenseMatrix) -> f64 {
    let n = w.rows();
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| w[(i, j)])
        .sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct KMeans {
    labels: Vec<usize>,
    inertia: f64,
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if r < *d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centers.last().expect("just pushed")));
        }
    }
    centers
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, ctr) in centers.iter().enumerate() {
        let d = sq_dist(p, ctr);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd iterations from a k-means++ start; empty clusters take the point
/// farthest from its center.
fn kmeans_run(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> KMeans {
    let n = points.len();
    let dim = points[0].len();
    let mut centers = kmeans_pp_init(points, k, rng);
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n).filter(|&i| counts[labels[i]] > 1).max_by(|&a, &b| {
                let da = sq_dist(&points[a], &centers[labels[a]]);
                let db = sq_dist(&points[b], &centers[labels[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            });
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                labels[i] = c;
                counts[c] = 1;
                changed = true;
            }
        }
        for (c, ctr) in centers.iter_mut().enumerate() {
            if counts[c] == 0 {
                continue;
            }
            let mut s = vec![0.0; dim];
            for (p, _) in points.iter().zip(&labels).filter(|(_, l)| **l == c) {
                for (a, b) in s.iter_mut().zip(p) {
                    *a += b;
                }
            }
            *ctr = s.into_iter().map(|v| v / counts[c] as f64).collect();
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum();
    KMeans { labels, inertia }
}

/// Best of [`KMEANS_RESTARTS`] seeded k-means++ runs; ties go to the
/// lowest restart index.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> (Vec<usize>, f64) {
    let runs: Vec<KMeans> = (0..KMEANS_RESTARTS as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r);
            kmeans_run(points, k, &mut rng)
        })
        .collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart");
    (best.labels, best.inertia)
}

/// Normalized spectral clustering of `w` into `k` groups.
///
/// Rows of the first `k` eigenvectors of the normalized Laplacian are
/// scaled to unit length and clustered with K-means.
pub fn spectral_partition(
    w: &DenseMatrix,
    k: usize,
    seed: u64,
) -> Result<Partition, FlowGraphError> {
    check_adjacency(w)?;
    let m = w.rows();
    if k == 0 || k > m {
        return Err(FlowGraphError::InvalidClusterCount { k, m });
    }
    let l = normalized_laplacian(w);
    let (vals, vecs) = sym_eigen(&l)?;
    let points: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let row: Vec<f64> = (0..k).map(|c| vecs[(i, c)]).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.into_iter().map(|v| v / norm).collect()
            } else {
                row
            }
        })
        .collect();
    let degenerate = degeneracy(&vals, &points, k);
    let (labels, inertia) = kmeans(&points, k, seed);
    let mut p = Partition::from_assignment(w, labels);
    p.k = k;
    p.internal.resize(k, 0.0);
    p.eigenvalues = vals;
    p.inertia = inertia;
    p.degenerate = degenerate.map(|e| e.to_string());
    Ok(p)
}

fn degeneracy(vals: &[f64], points: &[Vec<f64>], k: usize) -> Option<FlowGraphError> {
    if k < vals.len() {
        let gap = vals[k] - vals[k - 1];
        if gap <= EIGEN_GAP_TOL {
            return Some(FlowGraphError::DegenerateEmbedding { k, gap });
        }
    }
    let gram = DenseMatrix::from_fn(k, k, |a, b| points.iter().map(|p| p[a] * p[b]).sum());
    match sym_eigen(&gram) {
        Ok((ev, _)) if ev[0] <= EIGEN_GAP_TOL * ev[k - 1].max(1.0) => {
            Some(FlowGraphError::DegenerateEmbedding { k, gap: ev[0] })
        }
        _ => None,
    }
}

/// Dense matrix as CSV, one row per line.
pub fn matrix_to_csv(w: &DenseMatrix) -> String {
    let mut s = String::new();
    for i in 0..w.rows() {
        let row: Vec<String> = w.row(i).iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Undirected DOT graph: nodes colored by cluster, pen width
/// `0.5 + 4·w_ij / max w`.
pub fn to_dot(w: &DenseMatrix, partition: &Partition) -> String {
    let n = w.rows();
    let wmax = w.max_abs();
    let mut s = String::from("graph energy {\n  node [style=filled, fontcolor=white];\n");
    for i in 0..n {
        let c = partition.assignment.get(i).copied().unwrap_or(0);
        let _ = writeln!(
            s,
            "  n{i} [label=\"{i}\", fillcolor=\"{}\", tooltip=\"cluster {c}\"];",
            PALETTE[c % PALETTE.len()]
        );
    }
    for i in 0..n {
        for j in i + 1..n {
            let v = w[(i, j)];
            if v > 0.0 {
                let pen = 0.5 + 4.0 * v / wmax;
                let _ = writeln!(s, "  n{i} -- n{j} [penwidth={pen:.4}, tooltip=\"{v:e}\"];");
            }
        }
    }
    s.push_str("}\n");
    s
}
