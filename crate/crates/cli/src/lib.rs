//! Experiment runner around the `vortexflow` library: configuration,
//! deterministic initialization, snapshot and checkpoint files, and the
//! commands behind the `vortexflow` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod snapshot;

pub use config::ExperimentConfig;
pub use error::CliError;
