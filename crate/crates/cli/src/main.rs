use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use vjpsketch_cli::{run_diagnostics, run_experiment, write_outputs, DiagnosticsConfig, ExperimentConfig, Fault};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FaultArg {
    DropRescale,
}

/// Train MLPs with sketched backpropagation, or run the library self-checks.
#[derive(Debug, Parser)]
#[command(name = "vjpsketch", version)]
struct Args {
    /// Flat TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Methods, comma separated (e.g. `l1,per_element,indep_rcs`).
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    /// Keep fractions, comma separated.
    #[arg(long, value_delimiter = ',')]
    budget: Option<Vec<f64>>,
    /// `all`, `first`, `last` or a list of layer indices.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rates, comma separated.
    #[arg(long, value_delimiter = ',')]
    lr_grid: Option<Vec<f64>>,
    /// IDX directory or `synthetic`.
    #[arg(long)]
    dataset: Option<String>,
    /// Full-scale protocol: whole training file, 50 epochs, 13 learning rates.
    #[arg(long)]
    full: bool,
    /// Run the Monte-Carlo self-checks instead of training.
    #[arg(long)]
    diagnostics: bool,
    /// Monte-Carlo draws per diagnostic.
    #[arg(long, default_value_t = 20_000)]
    n_draws: usize,
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<FaultArg>,
}

fn experiment_config(args: &Args) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if args.full {
        cfg = cfg.full_protocol();
    }
    if let Some(v) = &args.seed {
        cfg.seeds = v.clone();
    }
    if let Some(v) = &args.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &args.method {
        cfg.methods = v.clone();
    }
    if let Some(v) = &args.budget {
        cfg.budgets = v.clone();
    }
    if let Some(v) = &args.layers {
        cfg.layers = v.clone();
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = &args.lr_grid {
        cfg.lr_grid = v.clone();
    }
    if let Some(v) = &args.dataset {
        cfg.dataset = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: Args) -> anyhow::Result<bool> {
    if args.diagnostics {
        let cfg = DiagnosticsConfig {
            n_draws: args.n_draws,
            seed: args.seed.as_ref().and_then(|s| s.first().copied()).unwrap_or(0),
            fault: match args.inject_fault {
                Some(FaultArg::DropRescale) => Fault::DropRescale,
                None => Fault::None,
            },
            ..DiagnosticsConfig::default()
        };
        let report = run_diagnostics(&cfg)?;
        for check in &report.checks {
            println!("{check}");
        }
        let failed = report.failures().count();
        println!("{} checks, {failed} failed", report.checks.len());
        return Ok(failed == 0);
    }
    let cfg = experiment_config(&args)?;
    let result = run_experiment(&cfg, |r| {
        eprintln!(
            "{} p={} seed={} lr={:.4} {} best={}",
            r.method,
            r.p,
            r.seed,
            r.lr,
            r.status,
            r.best_val_accuracy.map_or("-".into(), |a| format!("{a:.2}"))
        )
    })?;
    write_outputs(&result, &cfg, &cfg.out).with_context(|| format!("writing results to {}", cfg.out.display()))?;
    for row in &result.summary {
        println!(
            "{:<24} p={:<6} median={} std={} seeds={}",
            row.method,
            row.p,
            row.best_val_accuracy_median.map_or("-".into(), |v| format!("{v:.2}")),
            row.std_acc.map_or("-".into(), |v| format!("{v:.2}")),
            row.n_seeds
        );
    }
    let failed = result.failed_runs();
    if failed > 0 {
        eprintln!("{failed} runs diverged and were excluded");
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
