//! Experiment runner for the distributed eigenspace toolkit.
//!
//! A run is described by an [`config::ExperimentConfig`], executed by
//! [`experiments::run_experiment`] through the in-process federation, and
//! written as CSV by [`output::emit_csv`].

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{parse_config, ConfigError, EstimatorTag, Experiment, ExperimentConfig, ModelSpec};
pub use experiments::{run_experiment, ResultRow, ResultTable, RunError};
pub use output::{emit_csv, write_csv};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const CONFIG_ERROR: i32 = 2;
    pub const RUNTIME_FAILURE: i32 = 3;
}
