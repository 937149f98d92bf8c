use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use compsys::scenario::{
    certify_model, cluster_variants, compare_scenarios, parse_levels, parse_variants, run,
    GammaSpec, Mode, ModelSource, ScenarioConfig,
};
use compsys::simkit::{ValidationConfig, DEFAULT_DT, DEFAULT_HORIZON};

#[derive(Parser)]
#[command(
    name = "compsys",
    version,
    about = "Vector Lyapunov decomposition of polynomial networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify, partition and validate one scenario.
    Decompose(DecomposeArgs),
    /// Score initial-level variants under the worst-case partition.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Worst,
    Initial,
}

#[derive(Args)]
struct Common {
    /// Model file, or builtin:lv16 / builtin:vdp9.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Domain level, one value or a comma-separated list per node.
    #[arg(long, default_value = "0.6")]
    gamma: String,
    /// Number of clusters.
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "worst")]
    mode: ModeArg,
    /// JSON array of per-node initial levels (initial mode).
    #[arg(long)]
    levels: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: f64,
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
    /// Also write trajectory.csv for the first validation sample.
    #[arg(long)]
    trajectory: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// JSON array of per-node level vectors.
    #[arg(long)]
    variants: Option<PathBuf>,
    /// Add one variant per cluster: 0.5 on its nodes, 0.1 elsewhere.
    #[arg(long)]
    cluster_variants: bool,
}

fn base_config(c: &Common) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::new(ModelSource::parse(&c.model)?, c.seed);
    cfg.gamma = GammaSpec::parse(&c.gamma)?;
    cfg.k = c.k;
    Ok(cfg)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_all(dir: &Path, files: &[(&str, &str)]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn decompose(args: DecomposeArgs) -> Result<i32> {
    let mut cfg = base_config(&args.common)?;
    cfg.mode = match (args.mode, &args.levels) {
        (ModeArg::Worst, None) => Mode::WorstCase,
        (ModeArg::Initial, Some(p)) => Mode::Initial(parse_levels(&read(p)?)?),
        (ModeArg::Initial, None) => bail!("--mode initial needs --levels"),
        (ModeArg::Worst, Some(_)) => bail!("--levels is only used with --mode initial"),
    };
    cfg.validation = ValidationConfig {
        samples: args.samples,
        horizon: args.horizon,
        dt: args.dt,
        seed: cfg.seed,
    };
    cfg.trajectory = args.trajectory;
    let outcome = run(&cfg)?;
    write_all(&args.common.out, &outcome.artifacts.files())?;
    let cm = &outcome.certificates.comparison;
    eprintln!("gamma {:?}: {:?}", cm.gamma.first(), cm.hurwitz);
    if let Some(p) = &outcome.partition {
        eprintln!("partition {:?}, cut {:.4e}", p.clusters(), p.cut);
    }
    if let Some(v) = &outcome.validation {
        eprintln!(
            "validation: {} comparison and {} energy violations, {} exits",
            v.comparison_violations, v.energy_violations, v.exits
        );
    }
    eprintln!("status: {:?}", outcome.status);
    Ok(outcome.status.exit_code())
}

fn compare(args: CompareArgs) -> Result<i32> {
    let cfg = base_config(&args.common)?;
    cfg.check()?;
    let model = cfg.build_model()?;
    let gamma = cfg.gamma.resolve(model.m())?;
    let certs = certify_model(&model, &gamma)?;
    if !certs.comparison.hurwitz.is_hurwitz() {
        eprintln!(
            "comparison matrix is not Hurwitz: {:?}",
            certs.comparison.hurwitz
        );
        return Ok(2);
    }
    let mut variants = match &args.variants {
        Some(p) => parse_variants(&read(p)?)?,
        None => Vec::new(),
    };
    if args.cluster_variants {
        let base = compare_scenarios(&model, &certs, cfg.k, cfg.seed, &[])?;
        let g = certs
            .comparison
            .gamma
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        variants.extend(cluster_variants(
            &base.partition,
            0.5f64.min(g),
            0.1f64.min(g),
        ));
    }
    let report = compare_scenarios(&model, &certs, cfg.k, cfg.seed, &variants)?;
    write_all(&args.common.out, &[("compare.json", &report.to_json())])?;
    for row in &report.variants {
        eprintln!(
            "{:?}: cut {:.4e}, ratio {:?}",
            row.levels, row.cut, row.cut_intra_ratio
        );
    }
    Ok(0)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("COMPSYS_THREADS") {
        let n: usize = v.parse().with_context(|| format!("COMPSYS_THREADS={v}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = init_threads().and_then(|()| match cli.command {
        Command::Decompose(a) => decompose(a),
        Command::Compare(a) => compare(a),
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
