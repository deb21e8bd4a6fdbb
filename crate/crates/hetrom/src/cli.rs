//! Experiment front end: flat key=value config files, the train/eval/sweep
//! and behavior-analysis subcommands, and all CSV artifacts.

pub mod config;
pub mod runner;

pub use config::{parse_config, parse_config_str, ConfigError, ExperimentConfig};
pub use runner::{run, CliError, RunSummary, Subcommand};
