//! Experiment runner: configs, seeded pipelines, metrics, plots and ablations.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod output;
pub mod plot;
pub mod run;
pub mod trajectory;

pub use ablation::{run_ablation, Suite};
pub use config::{ExperimentConfig, Method};
pub use metrics::{coverage_metric, MetricsRow};
pub use plot::emit_plots;
pub use run::{run_experiment, run_seed, run_seeds, RunCache};
