//! Budget sweeps over methods, seeds and learning rates, aggregated per budget.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use vjpsketch::data::Dataset;
use vjpsketch::stats::{median, population_std};

use crate::config::{ExperimentConfig, LayerSelection};
use crate::train::{train, RunSpec, RunStatus};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const RUNS_FILE: &str = "runs.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const CONFIG_FILE: &str = "config.toml";

/// One `(method, p, seed, lr)` training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: String,
    pub layers: String,
    pub p: f64,
    pub seed: u64,
    pub lr: f64,
    pub status: String,
    pub best_val_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    pub final_train_loss: Option<f64>,
    /// Chosen learning rate for its `(method, p, seed)`.
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub method: String,
    pub layers: String,
    pub p: f64,
    pub seed: u64,
    pub lr: f64,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// Median and population standard deviation of the selected runs over seeds;
/// seeds whose runs all diverged are left out of both and of `n_seeds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub p: f64,
    pub method: String,
    pub layers: String,
    pub best_val_accuracy_median: Option<f64>,
    pub std_acc: Option<f64>,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentResult {
    pub summary: Vec<SummaryRow>,
    pub runs: Vec<RunRow>,
    pub epochs: Vec<EpochRow>,
}

impl ExperimentResult {
    pub fn failed_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.status != "completed").count()
    }
}

/// Runs the sweep on an already loaded split; `on_run` sees every finished run.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    mut on_run: impl FnMut(&RunRow),
) -> anyhow::Result<ExperimentResult> {
    cfg.validate()?;
    let mut dims = vec![train_set.dim()];
    dims.extend(&cfg.hidden);
    dims.push(train_set.num_classes().max(val_set.num_classes()));
    let layers = LayerSelection::parse(&cfg.layers)?.resolve(dims.len() - 1)?;
    let mut result = ExperimentResult::default();
    for (_, base) in cfg.method_specs()? {
        let method = base.label();
        for &p in &cfg.budgets {
            let sketch = ExperimentConfig::with_budget(base, p);
            let mut accuracies = Vec::new();
            for &seed in &cfg.seeds {
                let first = result.runs.len();
                for &lr in &cfg.lr_grid {
                    let spec = RunSpec {
                        dims: dims.clone(),
                        epochs: cfg.epochs,
                        batch_size: cfg.batch_size,
                        lr,
                        clip_norm: cfg.clip(),
                        seed,
                        sketch: Some(sketch),
                        layers: layers.clone(),
                    };
                    let out = train(&spec, train_set, val_set).with_context(|| format!("{method} p={p} seed={seed} lr={lr}"))?;
                    for e in &out.epochs {
                        result.epochs.push(EpochRow {
                            method: method.clone(),
                            layers: cfg.layers.clone(),
                            p,
                            seed,
                            lr,
                            epoch: e.epoch,
                            train_loss: e.train_loss,
                            val_accuracy: e.val_accuracy,
                        });
                    }
                    let best = out.best();
                    let row = RunRow {
                        method: method.clone(),
                        layers: cfg.layers.clone(),
                        p,
                        seed,
                        lr,
                        status: match out.status {
                            RunStatus::Completed => "completed".into(),
                            RunStatus::Diverged { step } => format!("diverged@{step}"),
                        },
                        best_val_accuracy: best.map(|b| b.0),
                        best_epoch: best.map(|b| b.1),
                        final_train_loss: out.epochs.last().map(|e| e.train_loss),
                        selected: false,
                    };
                    on_run(&row);
                    result.runs.push(row);
                }
                if let Some(chosen) = select_best(&result.runs[first..]) {
                    let row = &mut result.runs[first + chosen];
                    row.selected = true;
                    accuracies.push(row.best_val_accuracy.expect("completed runs have epochs"));
                }
            }
            result.summary.push(SummaryRow {
                p,
                method: method.clone(),
                layers: cfg.layers.clone(),
                best_val_accuracy_median: median(&accuracies),
                std_acc: population_std(&accuracies),
                n_seeds: accuracies.len(),
            });
        }
    }
    Ok(result)
}

/// Index of the completed run with the highest best accuracy; the earliest
/// grid entry wins ties.
pub fn select_best(runs: &[RunRow]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in runs.iter().enumerate() {
        if r.status != "completed" {
            continue;
        }
        let Some(acc) = r.best_val_accuracy else { continue };
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((i, acc));
        }
    }
    best.map(|(i, _)| i)
}

/// Loads the configured dataset and runs the sweep.
pub fn run_experiment(cfg: &ExperimentConfig, on_run: impl FnMut(&RunRow)) -> anyhow::Result<ExperimentResult> {
    cfg.validate()?;
    let (train_set, val_set) = cfg.load_data().with_context(|| format!("loading dataset `{}`", cfg.dataset))?;
    run_sweep(cfg, &train_set, &val_set, on_run)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.csv`, `runs.csv`, `epochs.csv` and the resolved config.
pub fn write_outputs(result: &ExperimentResult, cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_csv(
        &out.join(SUMMARY_FILE),
        &result.summary,
        &["p", "method", "layers", "best_val_accuracy_median", "std_acc", "n_seeds"],
    )?;
    write_csv(
        &out.join(RUNS_FILE),
        &result.runs,
        &["method", "layers", "p", "seed", "lr", "status", "best_val_accuracy", "best_epoch", "final_train_loss", "selected"],
    )?;
    write_csv(
        &out.join(EPOCHS_FILE),
        &result.epochs,
        &["method", "layers", "p", "seed", "lr", "epoch", "train_loss", "val_accuracy"],
    )?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml())?;
    Ok(())
}
