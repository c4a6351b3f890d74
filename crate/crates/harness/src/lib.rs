//! Experiment orchestration around the core library: seeded runs with CSV
//! artifacts, discrepancy sweeps, ablations and cross-seed reports.

pub mod config;
pub mod experiments;
pub mod run;

pub use config::{config_hash, AblationConfig, ExperimentConfig, SweepConfig};
pub use experiments::{ablate, report, report_dir, sweep, train, Overrides, Variant};
pub use run::{run_evaluation, run_training, RunOutcome, Summary};
