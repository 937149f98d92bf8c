use compsys::flowgraph::{build_adjacency, AdjacencyMode, EnergyGraph};
use compsys::netmodel::NetworkModel;
use compsys::scenario::{
    certify_model, cluster_variants, compare_scenarios, parse_levels, run, Builtin, GammaSpec,
    ModelSource, RunStatus, ScenarioConfig, ScenarioError,
};

/// Chain 0 - 1 - 2 with a weak link between 1 and 2.
const CHAIN: &str = r#"{
  "couplings": [
    {"g": ["0.2 * x1"], "source": 1, "target": 0},
    {"g": ["0.2 * x0"], "source": 0, "target": 1},
    {"g": ["0.02 * x2"], "source": 2, "target": 1},
    {"g": ["0.02 * x1"], "source": 1, "target": 2}
  ],
  "meta": {"equilibrium": [0.0, 0.0, 0.0], "generator": "test", "seed": null},
  "subsystems": [
    {"dim": 1, "f": ["-1 * x0"], "id": 0},
    {"dim": 1, "f": ["-1 * x1"], "id": 1},
    {"dim": 1, "f": ["-1 * x2"], "id": 2}
  ]
}"#;

fn chain() -> NetworkModel {
    NetworkModel::from_json(CHAIN).unwrap()
}

#[test]
fn config_parsing() {
    assert_eq!(
        ModelSource::parse("builtin:lv16").unwrap(),
        ModelSource::Builtin(Builtin::Lv16)
    );
    assert_eq!(
        ModelSource::parse("builtin:vdp9").unwrap(),
        ModelSource::Builtin(Builtin::Vdp9)
    );
    assert!(ModelSource::parse("builtin:lv99").is_err());
    assert!(matches!(
        ModelSource::parse("net.json").unwrap(),
        ModelSource::File(_)
    ));

    assert_eq!(GammaSpec::parse("0.6").unwrap(), GammaSpec::Uniform(0.6));
    let per = GammaSpec::parse("0.5, 0.2,1").unwrap();
    assert_eq!(per.resolve(3).unwrap(), vec![0.5, 0.2, 1.0]);
    assert!(matches!(
        per.resolve(2),
        Err(ScenarioError::InvalidGamma(_))
    ));
    assert!(matches!(
        GammaSpec::parse("abc"),
        Err(ScenarioError::InvalidGamma(_))
    ));
    assert_eq!(parse_levels("[0.5, 0.1]").unwrap(), vec![0.5, 0.1]);
    assert!(parse_levels("{").is_err());
}

#[test]
fn out_of_range_gamma_is_rejected() {
    for g in [1.5, 0.0, -0.1, f64::NAN] {
        let mut cfg = ScenarioConfig::new(ModelSource::Builtin(Builtin::Lv16), 1);
        cfg.gamma = GammaSpec::Uniform(g);
        assert!(
            matches!(run(&cfg), Err(ScenarioError::InvalidGamma(_))),
            "{g}"
        );
    }
    let mut cfg = ScenarioConfig::new(ModelSource::Builtin(Builtin::Lv16), 1);
    cfg.k = 0;
    assert!(matches!(run(&cfg), Err(ScenarioError::Config(_))));
}

#[test]
fn exit_codes_are_distinct() {
    let codes = [
        RunStatus::Success,
        RunStatus::NotHurwitz,
        RunStatus::ValidationFailed,
    ]
    .map(RunStatus::exit_code);
    assert_eq!(codes, [0, 2, 3]);
}

#[test]
fn chain_certifies_first_time() {
    let m = chain();
    let c = certify_model(&m, &[0.6; 3]).unwrap();
    assert_eq!(c.attempts.len(), 1);
    assert!(c.comparison.hurwitz.is_hurwitz());
    assert_eq!(c.flows.len(), m.edges().len());
}

#[test]
fn empty_variant_list_gives_base_only() {
    let m = chain();
    let c = certify_model(&m, &[0.6; 3]).unwrap();
    let rep = compare_scenarios(&m, &c, 2, 0, &[]).unwrap();
    assert!(rep.variants.is_empty());
    assert_eq!(rep.partition.clusters(), vec![vec![0, 1], vec![2]]);
    assert!(rep.base.cut > 0.0 && rep.base.cut < rep.base.intra);
}

#[test]
fn equal_levels_scale_the_worst_case() {
    let m = chain();
    let c = certify_model(&m, &[0.6; 3]).unwrap();
    let rep = compare_scenarios(&m, &c, 2, 0, &[vec![0.3; 3], vec![0.6; 3]]).unwrap();
    let (half, full) = (&rep.variants[0], &rep.variants[1]);
    // the bound is linear in v(0), so halving every level halves every weight
    assert!((half.cut - 0.5 * rep.base.cut).abs() <= 1e-12 * rep.base.cut.max(1.0));
    assert!((half.intra - 0.5 * rep.base.intra).abs() <= 1e-12 * rep.base.intra.max(1.0));
    assert!((half.cut_intra_ratio.unwrap() - rep.base.cut_intra_ratio.unwrap()).abs() < 1e-12);
    assert!((full.cut - rep.base.cut).abs() <= 1e-12);

    let g = EnergyGraph::new(&c.comparison, &c.flows).unwrap();
    let w = build_adjacency(&g, &AdjacencyMode::WorstCase).unwrap();
    let wh = build_adjacency(&g, &AdjacencyMode::Initial(vec![0.3; 3])).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((wh[(i, j)] - 0.5 * w[(i, j)]).abs() <= 1e-12);
        }
    }
}

#[test]
fn cluster_variants_rows() {
    let m = chain();
    let c = certify_model(&m, &[0.6; 3]).unwrap();
    let base = compare_scenarios(&m, &c, 2, 0, &[]).unwrap();
    let vars = cluster_variants(&base.partition, 0.5, 0.1);
    assert_eq!(vars, vec![vec![0.5, 0.5, 0.1], vec![0.1, 0.1, 0.5]]);
    let rep = compare_scenarios(&m, &c, 2, 0, &vars).unwrap();
    assert_eq!(rep.variants.len(), 2);
    assert!(rep
        .variants
        .iter()
        .all(|r| r.cut_intra_ratio.is_some_and(|x| x > 0.0)));
    assert!(compare_scenarios(&m, &c, 2, 0, &[vec![0.7, 0.1, 0.1]]).is_err());
    assert!(compare_scenarios(&m, &c, 2, 0, &[vec![0.1, 0.1]]).is_err());
}
