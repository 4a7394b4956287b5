//! Experiment plumbing: config files, seeded replications, output files, CLI.

pub mod cli;
pub mod config;
pub mod output;
pub mod run;

pub use config::{load_config, parse_config, ExperimentConfig};
pub use run::{run, run_with, Execution, RegretTrace, TraceRow};
