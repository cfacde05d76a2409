//! Command-line front end: runs one experiment over its noise-level by
//! seed grid and writes results.csv, results.json, and a plot script.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use gpssm_bench::config::{ExperimentConfig, ExperimentKind, MatcherChoice};
use gpssm_bench::emit::emit_all;
use gpssm_bench::learner::{run_all, RunResult};

/// Online GP state-space learner benchmark runner.
#[derive(Debug, Parser)]
#[command(name = "bench", version, about)]
struct Cli {
    /// Experiment to run: kink, tvparam, or custom.
    experiment: Option<ExperimentKind>,

    /// TOML config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Moment-matching backend: ekf, ukf, or adf.
    #[arg(long)]
    matcher: Option<MatcherChoice>,

    /// Measurement noise level; repeat for several levels.
    #[arg(long = "noise")]
    noise_levels: Vec<f64>,

    /// Number of seeds to run.
    #[arg(long)]
    seeds: Option<u64>,

    /// First seed value.
    #[arg(long)]
    seed_base: Option<u64>,

    /// Inducing-point budget.
    #[arg(long)]
    budget: Option<usize>,

    /// Novelty threshold for admitting inducing points.
    #[arg(long)]
    eps_tol: Option<f64>,

    /// Steps to run.
    #[arg(long)]
    horizon: Option<usize>,

    /// Integration step in seconds.
    #[arg(long)]
    dt: Option<f64>,

    /// Enable or disable online hyperparameter adaptation.
    #[arg(long)]
    hyperopt: Option<bool>,

    /// Output directory for results.csv, results.json, plot_results.py.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn build_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, cli.experiment) {
        (Some(path), _) => ExperimentConfig::from_file(path)?,
        (None, Some(kind)) => ExperimentConfig::defaults(kind),
        (None, None) => anyhow::bail!("pass an experiment name or --config <file>"),
    };
    if let Some(kind) = cli.experiment {
        if cli.config.is_some() && kind != cfg.experiment {
            anyhow::bail!(
                "experiment argument `{}` contradicts config file `{}`",
                kind.name(),
                cfg.experiment.name()
            );
        }
    }
    if let Some(m) = cli.matcher {
        cfg.matcher = m;
    }
    if !cli.noise_levels.is_empty() {
        cfg.noise_levels = cli.noise_levels.clone();
    }
    if let Some(v) = cli.seeds {
        cfg.seeds = v;
    }
    if let Some(v) = cli.seed_base {
        cfg.seed_base = v;
    }
    if let Some(v) = cli.budget {
        cfg.budget = v;
    }
    if let Some(v) = cli.eps_tol {
        cfg.eps_tol = v;
    }
    if let Some(v) = cli.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = cli.dt {
        cfg.dt = v;
    }
    if let Some(v) = cli.hyperopt {
        cfg.hyperopt.enabled = v;
    }
    if let Some(dir) = &cli.out {
        cfg.out_dir = Some(dir.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err:#}");
            return ExitCode::FAILURE;
        }
    };

    let outcomes = run_all(&cfg);
    let mut results: Vec<RunResult> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => failures.push(format!("{e:#}")),
        }
    }

    for r in &results {
        let nmse = r
            .nmse
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(" ");
        println!(
            "{} {} noise={} seed={}: nmse [{}] in {:.2}s, {} inducing",
            r.experiment, r.matcher, r.noise, r.seed, nmse, r.seconds, r.max_inducing
        );
    }
    for f in &failures {
        eprintln!("failed: {f}");
    }

    let out_dir = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("results/{}", cfg.experiment.name())));
    if let Err(err) = emit_all(&out_dir, &cfg, &results, &failures) {
        eprintln!("error writing results: {err:#}");
        return ExitCode::FAILURE;
    }
    println!("wrote {}", out_dir.display());

    if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
