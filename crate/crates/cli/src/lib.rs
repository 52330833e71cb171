//! Configuration, orchestration and output writing for the `adaptrunc`
//! command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod models;
pub mod output;

pub use commands::{geweke_command, gold_standard_command, run_command, RunOutcome};
pub use config::{parse_config, Overrides, RunConfig};
pub use error::{CliError, CliResult};
