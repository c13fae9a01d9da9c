//! Batch front end: configuration, commands and artifacts.
//!
//! Each `cmd_*` function returns its report together with an [`Outcome`]
//! whose [`Outcome::exit_code`] is what the `fwdreg` binary exits with.

pub mod commands;
pub mod config;
pub mod output;

use fwdreg_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(CoreError::Numerical(_)) => 3,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Result class of a command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    VerificationFailed,
    Infeasible,
    Diverged,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::VerificationFailed => 1,
            Outcome::Infeasible => 2,
            Outcome::Diverged => 3,
        }
    }
}
