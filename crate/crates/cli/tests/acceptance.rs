//! Acceptance criteria 1 to 9. Every test prints one `PASS`/`FAIL` line.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use compsys::certify::{comparison_certificate, lyapunov_certificates};
use compsys::flowgraph::{
    build_adjacency, normalized_laplacian, spectral_partition, AdjacencyMode, EnergyGraph,
};
use compsys::linalg::{cholesky, sym_eigen, HurwitzVerdict};
use compsys::netmodel::{build_lotka_volterra, build_vdp_network, NetworkModel, TWO_NODE_LINEAR};
use compsys::scenario::{certify_model, Certificates};
use compsys::sdpsos::{
    monomials_in_range, prove_sos, solve_sdp, LinearFunctional, SdpProblem, SdpStatus, SosError,
};
use compsys::simkit::{validate, ValidationConfig, ValidationReport};
use compsys::{DenseMatrix, Polynomial};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, ok: bool, what: &str, detail: String) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("criterion {id}: {tag}: {what}: {detail}");
}

fn random_poly(rng: &mut ChaCha8Rng, nvars: usize, degree: u32) -> Polynomial {
    let vars: Vec<usize> = (0..nvars).collect();
    let terms: Vec<_> = monomials_in_range(&vars, 0, degree)
        .into_iter()
        .map(|m| (m, rng.random_range(-1.0..1.0)))
        .collect();
    Polynomial::from_terms(nvars, terms).unwrap()
}

/// Σ_{k≤3} h_k² with random cubics `h_k`.
fn random_sos(rng: &mut ChaCha8Rng, nvars: usize) -> Polynomial {
    let count = rng.random_range(1..=3);
    let mut p = Polynomial::zero(nvars);
    for _ in 0..count {
        let h = random_poly(rng, nvars, 3);
        p = &p + &(&h * &h);
    }
    p
}

/// `max |p − zᵀQz| / (1 + max |coef p|)` with the Gram form expanded by hand.
fn gram_residual(p: &Polynomial, basis: &[compsys::Monomial], q: &DenseMatrix) -> f64 {
    let n = p.nvars();
    let mut rebuilt = Polynomial::zero(n);
    for a in 0..basis.len() {
        for b in 0..basis.len() {
            let t = Polynomial::monomial(n, basis[a].mul(&basis[b]), q[(a, b)]).unwrap();
            rebuilt = &rebuilt + &t;
        }
    }
    (p - &rebuilt).max_abs_coeff() / (1.0 + p.max_abs_coeff())
}

#[test]
fn criterion_1_sos_soundness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for k in 0..100 {
        let nvars = rng.random_range(2..=3);
        let p = random_sos(&mut rng, nvars);
        let support: Vec<usize> = (0..nvars).collect();
        match prove_sos(&p, &support) {
            Ok(cert) => {
                let r = gram_residual(&p, &cert.basis, &cert.q);
                worst = worst.max(r);
                let mut shifted = cert.q.clone();
                for i in 0..shifted.rows() {
                    shifted[(i, i)] += 1e-9;
                }
                let psd = cholesky(&shifted).is_ok();
                if r > 1e-7 || !psd {
                    failures.push(format!("sos {k}: residual {r:e}, shifted Cholesky {psd}"));
                }
            }
            Err(e) => failures.push(format!("sos {k}: {e}")),
        }
    }
    let mut rejected = 0;
    for k in 0..50 {
        let nvars = rng.random_range(2..=3);
        let q = random_sos(&mut rng, nvars);
        let x0: Vec<f64> = (0..nvars).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shift = q.eval(&x0).unwrap() + rng.random_range(0.01..1.0);
        let p = &q - &Polynomial::constant(nvars, shift);
        assert!(p.eval(&x0).unwrap() < 0.0);
        let support: Vec<usize> = (0..nvars).collect();
        match prove_sos(&p, &support) {
            Err(SosError::Infeasible) => rejected += 1,
            other => failures.push(format!("negative {k}: {:?}", other.map(|_| "certified"))),
        }
    }
    let elapsed = start.elapsed();
    let ok = failures.is_empty() && elapsed < Duration::from_secs(120);
    report(
        1,
        ok,
        "SOS soundness",
        format!("max relative Gram residual {worst:.2e}, {rejected}/50 rejected, {elapsed:.1?}; {failures:?}"),
    );
    assert!(ok);
}

/// Random SDP whose constraints are satisfied by a planted positive definite point.
fn planted_sdp(rng: &mut ChaCha8Rng) -> SdpProblem {
    let mut p = SdpProblem::new();
    let dims: Vec<usize> = (0..rng.random_range(1..=3))
        .map(|_| rng.random_range(2..=5))
        .collect();
    let mut x = Vec::new();
    for &d in &dims {
        p.add_block(d);
        let vals: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = DenseMatrix::from_vec(d, d, vals).unwrap();
        let mut s = b.mul(&b.transpose());
        for i in 0..d {
            s[(i, i)] += 0.1;
        }
        x.push(s);
    }
    for _ in 0..rng.random_range(3..=10) {
        let mut f = LinearFunctional::new();
        for (blk, &d) in dims.iter().enumerate() {
            for r in 0..d {
                for c in r..d {
                    if rng.random_bool(0.5) {
                        f.add_entry(blk, r, c, rng.random_range(-1.0..1.0));
                    }
                }
            }
        }
        let rhs = f.eval(&x, &[]);
        p.add_constraint(f, rhs);
    }
    for (blk, &d) in dims.iter().enumerate() {
        for r in 0..d {
            p.objective.add_entry(blk, r, r, 1.0);
        }
    }
    p
}

#[test]
fn criterion_2_sdp_oracles() {
    // min x  s.t. [[x, 1], [1, x]] ⪰ 0: X = [[x, 1], [1, x]] with X01 = 1, X00 = X11
    let mut p = SdpProblem::new();
    p.add_block(2);
    let mut off = LinearFunctional::new();
    off.add_entry(0, 0, 1, 1.0);
    p.add_constraint(off, 1.0);
    let mut diag = LinearFunctional::new();
    diag.add_entry(0, 0, 0, 1.0).add_entry(0, 1, 1, -1.0);
    p.add_constraint(diag, 0.0);
    p.objective.add_entry(0, 0, 0, 1.0);
    let sol = solve_sdp(&p, 1e-7, 200).unwrap();
    let x = sol.blocks[0][(0, 0)];
    let analytic_ok = sol.status == SdpStatus::Optimal && (x - 1.0).abs() <= 1e-6;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for k in 0..20 {
        let prob = planted_sdp(&mut rng);
        let s = solve_sdp(&prob, 1e-7, 200).unwrap();
        worst = worst.max(s.residual);
        if s.status != SdpStatus::Optimal || s.residual > 1e-7 {
            bad.push((k, s.status, s.residual));
        }
    }
    let ok = analytic_ok && bad.is_empty();
    report(
        2,
        ok,
        "SDP oracles",
        format!(
            "x* = {x:.9} ({:?}); planted: max residual {worst:.2e}, failures {bad:?}",
            sol.status
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_3_comparison_row_oracle() {
    let start = Instant::now();
    let eps = 0.1;
    let m = NetworkModel::from_json(TWO_NODE_LINEAR).unwrap();
    let lfs = lyapunov_certificates(&m).unwrap();
    let cm = comparison_certificate(&m, &lfs, &[1.0, 1.0]).unwrap();
    // V = c·x²: 2x(−x + εy) ≤ −2x² + ε(x² + y²)
    let (a11, a12) = (-2.0 + eps, eps);
    let mut ok = true;
    let mut detail = Vec::new();
    for (i, row) in cm.rows.iter().enumerate() {
        let j = 1 - i;
        let (d, o) = (row.a[i], row.a[j]);
        ok &= d <= a11 + 1e-3
            && o <= a12 + 1e-3
            && o >= 0.0
            && (row.sum() - (a11 + a12)).abs() <= 1e-3;
        detail.push(format!(
            "row {i}: a_ii {d:.6}, a_ij {o:.6}, sum {:.6}",
            row.sum()
        ));
    }
    let elapsed = start.elapsed();
    ok &= cm.hurwitz == HurwitzVerdict::HurwitzByDominance && elapsed < Duration::from_secs(10);
    report(
        3,
        ok,
        "comparison-row oracle",
        format!("{}; {:?}; {elapsed:.1?}", detail.join("; "), cm.hurwitz),
    );
    assert!(ok);
}

struct Run {
    label: &'static str,
    model: NetworkModel,
    certs: Certificates,
    report: ValidationReport,
    elapsed: Duration,
}

fn run_case(label: &'static str, model: NetworkModel, gamma: f64, seed: u64) -> Run {
    let start = Instant::now();
    let certs = certify_model(&model, &vec![gamma; model.m()]).unwrap();
    let cfg = ValidationConfig {
        samples: 50,
        horizon: 20.0,
        dt: 1e-3,
        seed,
    };
    // the comparison inequality needs only a Metzler matrix
    let report = validate(
        &model,
        &certs.lyapunov,
        &certs.comparison,
        &certs.flows,
        &cfg,
    )
    .unwrap();
    Run {
        label,
        model,
        certs,
        report,
        elapsed: start.elapsed(),
    }
}

fn runs() -> &'static [Run] {
    static RUNS: OnceLock<Vec<Run>> = OnceLock::new();
    RUNS.get_or_init(|| {
        vec![
            run_case(
                "lv16(seed=1) gamma=0.01",
                build_lotka_volterra(16, 1).unwrap(),
                0.01,
                1,
            ),
            run_case(
                "lv16(seed=1) gamma=0.6",
                build_lotka_volterra(16, 1).unwrap(),
                0.6,
                1,
            ),
            run_case(
                "vdp9(seed=7) gamma=0.6",
                build_vdp_network(9, 7).unwrap(),
                0.6,
                7,
            ),
        ]
    })
}

#[test]
fn criterion_4_comparison_principle() {
    let mut ok = true;
    let mut total = Duration::ZERO;
    let mut detail = Vec::new();
    for r in runs() {
        let rep = &r.report;
        let gamma = &r.certs.comparison.gamma;
        let as_requested = gamma.iter().all(|g| *g == gamma[0])
            && r.label.ends_with(&format!("gamma={}", gamma[0]));
        let a = &r.certs.comparison.a;
        let metzler = (0..a.rows()).all(|i| (0..a.cols()).all(|j| i == j || a[(i, j)] >= 0.0));
        // a diverging sample is checked up to its exit from D
        let blowups_exit = rep
            .samples
            .iter()
            .filter(|s| s.error.is_some())
            .all(|s| s.exit_time.is_some());
        let pass = as_requested
            && metzler
            && blowups_exit
            && rep.comparison_violations == 0
            && rep.samples.len() == 50;
        ok &= pass;
        total += r.elapsed;
        detail.push(format!(
            "{}: {} violations, {} exits, {} blowups, tol {:.2e}, {:?}",
            r.label,
            rep.comparison_violations,
            rep.exits,
            rep.blowups,
            rep.tol_cmp,
            r.certs.comparison.hurwitz
        ));
    }
    ok &= total < Duration::from_secs(300);
    report(
        4,
        ok,
        "comparison principle",
        format!("{}; {total:.1?}", detail.join("; ")),
    );
    assert!(ok);
}

#[test]
fn criterion_5_energy_bounds() {
    let mut ok = true;
    let mut detail = Vec::new();
    for r in runs() {
        let rep = &r.report;
        let edges = r.model.edges().len();
        let bounded = r.certs.flows.len() == edges && r.certs.comparison.hurwitz.is_hurwitz();
        let pass = bounded && rep.energy_violations == 0 && rep.blowups == 0;
        ok &= pass;
        if bounded {
            let worst = rep
                .edges
                .iter()
                .map(|e| e.worst_margin)
                .fold(f64::NEG_INFINITY, f64::max);
            detail.push(format!(
                "{}: {} violations over {edges} edges, worst margin {worst:.2e}",
                r.label, rep.energy_violations
            ));
        } else {
            detail.push(format!(
                "{}: no certified bound ({:?})",
                r.label, r.certs.comparison.hurwitz
            ));
        }
    }
    report(5, ok, "energy-bound domination", detail.join("; "));
    assert!(ok);
}

fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let density = rng.random_range(0.2..0.9);
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

#[test]
fn criterion_6_laplacian_and_clustering() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut min_eig, mut worst_null) = (f64::INFINITY, 0.0f64);
    for _ in 0..50 {
        let n = rng.random_range(3..=20);
        let w = random_graph(n, &mut rng);
        let l = normalized_laplacian(&w);
        min_eig = min_eig.min(sym_eigen(&l).unwrap().0[0]);
        // D^{1/2}·1 spans the kernel when every node has an edge
        let deg: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| w[(i, j)]).sum::<f64>())
            .collect();
        if deg.iter().all(|d| *d > 0.0) {
            let v: Vec<f64> = deg.iter().map(|d| d.sqrt()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let lv = l.matvec(&v).unwrap();
            worst_null = worst_null.max(lv.iter().map(|x| x.abs()).fold(0.0, f64::max) / norm);
        }
    }
    let mut recovered = 0;
    for seed in 0..10u64 {
        let mut prng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut perm: Vec<usize> = (0..16).collect();
        perm.shuffle(&mut prng);
        let side = |i: usize| usize::from(perm[i] >= 8);
        let w = DenseMatrix::from_fn(16, 16, |i, j| match (i == j, side(i) == side(j)) {
            (true, _) => 0.0,
            (false, true) => 1.0,
            (false, false) => 0.01,
        });
        let part = spectral_partition(&w, 2, seed).unwrap();
        let exact = (0..16).all(|i| {
            (0..16).all(|j| (part.assignment[i] == part.assignment[j]) == (side(i) == side(j)))
        });
        recovered += usize::from(exact);
    }
    let ok = min_eig >= -1e-9 && worst_null <= 1e-8 && recovered == 10;
    report(
        6,
        ok,
        "Laplacian and clustering",
        format!("min eigenvalue {min_eig:.2e}, null residual {worst_null:.2e}, planted recovered {recovered}/10"),
    );
    assert!(ok);
}

fn cut_of(w: &DenseMatrix, side: &[bool]) -> f64 {
    let n = side.len();
    let mut c = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            if side[i] != side[j] {
                c += w[(i, j)];
            }
        }
    }
    c
}

/// Spectral cut, best of 200 random balanced bipartitions, and cut/total.
fn decomposition_quality(run: &Run) -> Result<(f64, f64, f64), String> {
    let cm = &run.certs.comparison;
    let graph = EnergyGraph::new(cm, &run.certs.flows).map_err(|e| e.to_string())?;
    let w = build_adjacency(&graph, &AdjacencyMode::WorstCase).map_err(|e| e.to_string())?;
    let part = spectral_partition(&w, 2, 1).map_err(|e| e.to_string())?;
    let n = w.rows();
    let side: Vec<bool> = part.assignment.iter().map(|&c| c == 0).collect();
    let cut = cut_of(&w, &side);
    let total: f64 = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| w[(i, j)])
        .sum();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut best = f64::INFINITY;
    for _ in 0..200 {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let mut s = vec![false; n];
        for &i in &idx[..n / 2] {
            s[i] = true;
        }
        best = best.min(cut_of(&w, &s));
    }
    Ok((cut, best, cut / total))
}

#[test]
fn criterion_7_decomposition_quality() {
    let start = Instant::now();
    let (ok, detail) = match decomposition_quality(&runs()[1]) {
        Ok((cut, best, ratio)) => (
            cut <= best && ratio <= 0.25,
            format!("spectral cut {cut:.4e}, best random {best:.4e}, cut/total {ratio:.4}"),
        ),
        Err(e) => (false, format!("no energy graph at gamma=0.6: {e}")),
    };
    let extra = match decomposition_quality(&runs()[0]) {
        Ok((cut, best, ratio)) => format!(
            "(gamma=0.01 for reference: cut {cut:.4e}, best random {best:.4e}, ratio {ratio:.4})"
        ),
        Err(e) => format!("(gamma=0.01: {e})"),
    };
    let ok = ok && start.elapsed() < Duration::from_secs(60);
    report(7, ok, "decomposition quality", format!("{detail} {extra}"));
    assert!(ok);
}

#[test]
fn criterion_8_falsification_probe() {
    let m = NetworkModel::from_json(TWO_NODE_LINEAR).unwrap();
    let lfs = lyapunov_certificates(&m).unwrap();
    let mut cm = comparison_certificate(&m, &lfs, &[0.6, 0.6]).unwrap();
    let clean = validate(
        &m,
        &lfs,
        &cm,
        &[],
        &ValidationConfig {
            samples: 50,
            horizon: 20.0,
            dt: 1e-3,
            seed: 8,
        },
    )
    .unwrap();
    cm.a[(0, 1)] = -cm.a[(0, 1)];
    let probed = validate(
        &m,
        &lfs,
        &cm,
        &[],
        &ValidationConfig {
            samples: 50,
            horizon: 20.0,
            dt: 1e-3,
            seed: 8,
        },
    )
    .unwrap();
    let ok = clean.comparison_violations == 0 && probed.comparison_violations > 0;
    report(
        8,
        ok,
        "falsification probe",
        format!(
            "a_12 {:.4} -> {:.4}: {} violations (clean matrix: {})",
            -cm.a[(0, 1)],
            cm.a[(0, 1)],
            probed.comparison_violations,
            clean.comparison_violations
        ),
    );
    assert!(ok);
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("json" | "csv")))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn decompose(gamma: &str, out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_compsys"))
        .args([
            "decompose",
            "--model",
            "builtin:lv16",
            "--seed",
            "1",
            "--gamma",
            gamma,
            "--k",
            "2",
            "--out",
        ])
        .arg(out)
        .status()
        .unwrap()
        .code()
        .unwrap()
}

#[test]
fn criterion_9_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for gamma in ["0.6", "0.01"] {
        let (a, b) = (
            tmp.path().join(format!("{gamma}-a")),
            tmp.path().join(format!("{gamma}-b")),
        );
        let (ca, cb) = (decompose(gamma, &a), decompose(gamma, &b));
        let (fa, fb) = (artifacts(&a), artifacts(&b));
        let same = ca == cb && !fa.is_empty() && fa == fb;
        ok &= same;
        detail.push(format!(
            "gamma {gamma}: exit {ca}/{cb}, files {:?}, identical {same}",
            fa.keys().collect::<Vec<_>>()
        ));
    }
    report(9, ok, "determinism", detail.join("; "));
    assert!(ok);
}
