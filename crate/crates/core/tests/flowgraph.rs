use compsys::certify::{CmRow, ComparisonCertificate, FlowBound};
use compsys::flowgraph::{
    build_adjacency, cut_weight, edge_energy_bound, matrix_to_csv, normalized_laplacian,
    spectral_partition, to_dot, total_energy_bound, AdjacencyMode, EnergyGraph, FlowGraphError,
    Partition,
};
use compsys::linalg::{metzler_hurwitz, sym_eigen, HurwitzVerdict};
use compsys::{DenseMatrix, Polynomial};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mat(rows: &[&[f64]]) -> DenseMatrix {
    DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

/// Random Metzler matrix made Hurwitz by a dominant negative diagonal.
fn random_hurwitz(n: usize, rng: &mut impl Rng) -> DenseMatrix {
    let mut a = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                a[(i, j)] = rng.random_range(0.0..1.0);
            }
        }
    }
    for i in 0..n {
        let s: f64 = a.row(i).iter().sum();
        a[(i, i)] = -s - rng.random_range(0.1..1.0);
    }
    a
}

fn random_graph(n: usize, density: f64, rng: &mut impl Rng) -> DenseMatrix {
    let mut w = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(density) {
                let v = rng.random_range(0.01..2.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    w
}

fn cert(a: DenseMatrix, gamma: Vec<f64>) -> ComparisonCertificate {
    let m = a.rows();
    let rows = (0..m)
        .map(|i| CmRow::from_coefficients(i, a.row(i).to_vec()))
        .collect();
    ComparisonCertificate {
        hurwitz: metzler_hurwitz(&a).unwrap(),
        a,
        gamma,
        rows,
    }
}

fn flow(m: usize, target: usize, source: usize, u: Vec<f64>) -> FlowBound {
    FlowBound {
        target,
        source,
        u,
        phi: Polynomial::zero(m),
        evidence: None,
    }
}

#[test]
fn diagonal_bound() {
    let a = DenseMatrix::identity(3).scale(-1.0);
    let v0 = [0.3, 0.5, 0.7];
    let alpha = 2.5;
    let b = edge_energy_bound(&[0.0, alpha, 0.0], &a, &v0).unwrap();
    assert!((b - alpha * 0.5).abs() < 1e-14);
}

#[test]
fn two_node_inverse_bound() {
    let a = mat(&[&[-2.0, 1.0], &[1.0, -2.0]]);
    let b = edge_energy_bound(&[1.0, 0.0], &a, &[1.0, 1.0]).unwrap();
    assert!((b - 1.0).abs() < 1e-14);
}

#[test]
fn bound_monotone_in_initial_levels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let a = random_hurwitz(6, &mut rng);
        let u: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let v0: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let v1: Vec<f64> = v0.iter().map(|v| v + rng.random_range(0.0..0.5)).collect();
        let b0 = edge_energy_bound(&u, &a, &v0).unwrap();
        let b1 = edge_energy_bound(&u, &a, &v1).unwrap();
        assert!(b0 >= -1e-10);
        assert!(b1 >= b0 - 1e-12);
    }
}

#[test]
fn negative_weights_rejected() {
    let a = DenseMatrix::identity(2).scale(-1.0);
    assert!(matches!(
        edge_energy_bound(&[-1.0, 0.0], &a, &[1.0, 1.0]),
        Err(FlowGraphError::Negative { .. })
    ));
}

#[test]
fn total_bound_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random_hurwitz(4, &mut rng);
    let gamma = vec![0.6; 4];
    let empty = EnergyGraph::new(&cert(a.clone(), gamma.clone()), &[]).unwrap();
    assert_eq!(total_energy_bound(&empty, &gamma).unwrap(), 0.0);

    let one = vec![flow(4, 0, 1, vec![0.2, 0.3, 0.0, 0.0])];
    let g1 = EnergyGraph::new(&cert(a.clone(), gamma.clone()), &one).unwrap();
    let single = edge_energy_bound(&one[0].u, &a, &gamma).unwrap();
    assert_eq!(total_energy_bound(&g1, &gamma).unwrap(), single);

    let flows = vec![
        flow(4, 0, 1, vec![0.2, 0.3, 0.0, 0.0]),
        flow(4, 2, 1, vec![0.0, 0.1, 0.4, 0.0]),
        flow(4, 3, 0, vec![0.5, 0.0, 0.0, 0.05]),
    ];
    let g = EnergyGraph::new(&cert(a.clone(), gamma.clone()), &flows).unwrap();
    let sum: f64 = flows
        .iter()
        .map(|f| edge_energy_bound(&f.u, &a, &gamma).unwrap())
        .sum();
    assert!((total_energy_bound(&g, &gamma).unwrap() - sum).abs() < 1e-12);
    let summed = edge_energy_bound(&g.total_weights(), &a, &gamma).unwrap();
    assert!((summed - sum).abs() < 1e-10);
}

#[test]
fn adjacency_uses_max_rule() {
    let a = DenseMatrix::identity(3).scale(-1.0);
    let gamma = vec![1.0; 3];
    let flows = vec![
        flow(3, 0, 1, vec![0.3, 0.0, 0.0]),
        flow(3, 1, 0, vec![0.0, 0.7, 0.0]),
    ];
    let g = EnergyGraph::new(&cert(a, gamma), &flows).unwrap();
    let w = build_adjacency(&g, &AdjacencyMode::WorstCase).unwrap();
    assert!((w[(0, 1)] - 0.7).abs() < 1e-14);
    assert_eq!(w[(0, 1)], w[(1, 0)]);
    for i in 0..3 {
        assert_eq!(w[(i, i)], 0.0);
    }
    assert_eq!(w[(0, 2)], 0.0);
    assert_eq!(w[(1, 2)], 0.0);
    let wi = build_adjacency(&g, &AdjacencyMode::Initial(vec![0.5, 0.5, 0.5])).unwrap();
    assert!((wi[(0, 1)] - 0.35).abs() < 1e-14);
}

#[test]
fn not_hurwitz_graph_rejected() {
    let a = mat(&[&[-1.0, 2.0], &[2.0, -1.0]]);
    let c = cert(a, vec![1.0, 1.0]);
    assert_eq!(c.hurwitz, HurwitzVerdict::NotHurwitz);
    assert!(matches!(
        EnergyGraph::new(&c, &[]),
        Err(FlowGraphError::NotHurwitz)
    ));
}

#[test]
fn laplacian_of_single_edge() {
    let w = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
    let l = normalized_laplacian(&w);
    assert_eq!(l, mat(&[&[1.0, -1.0], &[-1.0, 1.0]]));
}

#[test]
fn laplacian_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = random_graph(7, 0.5, &mut rng);
    let l1 = normalized_laplacian(&w);
    let l2 = normalized_laplacian(&w.scale(13.0));
    assert!(l1.sub(&l2).max_abs() < 1e-14);
}

/// Connected components by depth-first search.
fn components(w: &DenseMatrix) -> Vec<Vec<usize>> {
    let n = w.rows();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut stack = vec![s];
        let mut comp = Vec::new();
        seen[s] = true;
        while let Some(v) = stack.pop() {
            comp.push(v);
            for u in 0..n {
                if w[(v, u)] > 0.0 && !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        out.push(comp);
    }
    out
}

#[test]
fn laplacian_spectrum_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let n = rng.random_range(3..12);
        let w = random_graph(n, 0.4, &mut rng);
        let l = normalized_laplacian(&w);
        let (vals, _) = sym_eigen(&l).unwrap();
        assert!(vals[0] >= -1e-9);
        for comp in components(&w) {
            let v: Vec<f64> = (0..n)
                .map(|i| {
                    if comp.contains(&i) {
                        w.row(i).iter().sum::<f64>().sqrt()
                    } else {
                        0.0
                    }
                })
                .collect();
            let r = l.matvec(&v).unwrap();
            assert!(r.iter().all(|x| x.abs() <= 1e-8));
        }
    }
}

#[test]
fn two_cliques_split_exactly() {
    let mut w = DenseMatrix::zeros(6, 6);
    for block in [0..3, 3..6] {
        for i in block.clone() {
            for j in block.clone() {
                if i != j {
                    w[(i, j)] = 1.0;
                }
            }
        }
    }
    let p = spectral_partition(&w, 2, 1).unwrap();
    assert_eq!(p.assignment, vec![0, 0, 0, 1, 1, 1]);
    assert_eq!(p.cut, 0.0);
}

#[test]
fn single_cluster() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = random_graph(6, 0.6, &mut rng);
    let p = spectral_partition(&w, 1, 3).unwrap();
    assert!(p.assignment.iter().all(|&c| c == 0));
    assert_eq!(p.cut, 0.0);
}

#[test]
fn planted_bipartition_recovered() {
    let n = 16;
    let w = DenseMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else if (i < 8) == (j < 8) {
            1.0
        } else {
            0.01
        }
    });
    for seed in 0..10 {
        let p = spectral_partition(&w, 2, seed).unwrap();
        let expect: Vec<usize> = (0..n).map(|i| usize::from(i >= 8)).collect();
        assert_eq!(p.assignment, expect, "seed {seed}");
    }
}

#[test]
fn partition_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let w = random_graph(12, 0.4, &mut rng);
    let a = spectral_partition(&w, 3, 5).unwrap();
    let b = spectral_partition(&w, 3, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn invalid_cluster_count() {
    let w = DenseMatrix::zeros(3, 3);
    assert!(matches!(
        spectral_partition(&w, 0, 1),
        Err(FlowGraphError::InvalidClusterCount { .. })
    ));
    assert!(matches!(
        spectral_partition(&w, 4, 1),
        Err(FlowGraphError::InvalidClusterCount { .. })
    ));
}

#[test]
fn tied_spectrum_is_flagged() {
    // three disconnected identical edges: eigenvalue 0 has multiplicity 3
    let mut w = DenseMatrix::zeros(6, 6);
    for k in 0..3 {
        w[(2 * k, 2 * k + 1)] = 1.0;
        w[(2 * k + 1, 2 * k)] = 1.0;
    }
    let p = spectral_partition(&w, 2, 1).unwrap();
    assert!(p.degenerate.is_some());
    assert_eq!(p.clusters().iter().filter(|c| !c.is_empty()).count(), 2);
}

#[test]
fn cut_weight_cases() {
    let w = mat(&[&[0.0, 0.7], &[0.7, 0.0]]);
    assert_eq!(cut_weight(&w, &[0, 0]), 0.0);
    assert_eq!(cut_weight(&w, &[0, 1]), 0.7);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let n = 9;
        let w = random_graph(n, 0.5, &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let mut brute = 0.0;
        for i in 0..n {
            for j in 0..n {
                if labels[i] != labels[j] {
                    brute += w[(i, j)];
                }
            }
        }
        assert!((cut_weight(&w, &labels) - 0.5 * brute).abs() < 1e-12);
        let p = Partition::from_assignment(&w, labels);
        let internal: f64 = p.internal.iter().sum();
        let total: f64 = w.as_slice().iter().sum::<f64>() * 0.5;
        assert!((internal + p.cut - total).abs() < 1e-12);
    }
}

#[test]
fn exports() {
    let w = mat(&[&[0.0, 0.5, 0.0], &[0.5, 0.0, 1.0], &[0.0, 1.0, 0.0]]);
    let csv = matrix_to_csv(&w);
    assert_eq!(csv.lines().count(), 3);
    let back: Vec<Vec<f64>> = csv
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(DenseMatrix::from_rows(&back).unwrap(), w);
    let p = Partition::from_assignment(&w, vec![0, 0, 1]);
    let dot = to_dot(&w, &p);
    assert!(dot.starts_with("graph"));
    assert!(dot.contains("n1 -- n2 [penwidth=4.5000"));
    assert!(dot.contains("n0 -- n1 [penwidth=2.5000"));
    assert!(!dot.contains("n0 -- n2"));
}
