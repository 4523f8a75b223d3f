//! Experiment harness for sketched backpropagation: MLP training sweeps with
//! CSV reports, and Monte-Carlo diagnostics of the sketching library.

pub mod config;
pub mod diagnostics;
pub mod experiment;
pub mod train;

pub use config::{ExperimentConfig, LayerSelection};
pub use diagnostics::{run_diagnostics, DiagnosticsConfig, DiagnosticsReport, Fault};
pub use experiment::{run_experiment, run_sweep, write_outputs, ExperimentResult, RunRow, SummaryRow};
pub use train::{train, RunSpec, TrainOutcome};
