//! Configuration, orchestration and result persistence for the `see-lab`
//! command-line tool.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, parse_config_str, ConfigError, ExperimentConfig};
pub use run::{execute, run, Overrides, RunError, RunOutput, RunSummary, Subcommand};
