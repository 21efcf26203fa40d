//! Command-line surface for the `levy-pme` solver: configuration parsing,
//! subcommand dispatch, CSV output and run manifests.

pub mod commands;
pub mod config;
pub mod output;

use std::fmt;

pub use commands::{Command, Outcome};
pub use config::Config;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments; the message names the offending key.
    Config(String),
    Library(levy_pme::Error),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(s) => write!(f, "configuration error: {s}"),
            CliError::Library(e) => write!(f, "{e}"),
            CliError::Io(s) => write!(f, "i/o error: {s}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<levy_pme::Error> for CliError {
    fn from(e: levy_pme::Error) -> Self {
        CliError::Library(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Library(_) => 1,
        }
    }
}
