//! Experiment harness: flat `key = value` configs, training loops with CSV
//! metrics, SVG convergence plots, and the numerical check suites.

mod check;
mod config;
mod plot;
mod run;

pub use check::{
    check_ggn, check_gradients, check_hvp, check_momentum, run_checks, CheckKind, CheckReport,
};
pub use config::{parse_config, ExperimentConfig, OptimizerKind, Task};
pub use plot::{emit_plot, PlotOptions};
pub use run::{
    diverged, epochs_to_accuracy, load_datasets, run_experiment, run_experiment_with, write_records, RunRecord,
    CSV_HEADER,
};
