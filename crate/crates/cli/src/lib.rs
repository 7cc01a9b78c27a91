//! Experiment harness: configs, repeat runners and output files for the
//! `dtstream` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

pub use config::ExperimentConfig;
pub use error::CliError;
