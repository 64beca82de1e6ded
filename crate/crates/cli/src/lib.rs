//! Library side of the `prolab` command: configuration, the four
//! subcommands and their on-disk formats.

pub mod commands;
pub mod config;

use thiserror::Error;

pub use config::RunConfig;

/// Failures mapped onto process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad configuration, missing or malformed inputs.
    #[error("{0}")]
    Usage(String),
    /// One or more verification checks failed.
    #[error("{0}")]
    Verification(String),
    /// A non-finite value or a quantity outside its domain.
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) | CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<prolab_core::Error> for CliError {
    fn from(e: prolab_core::Error) -> Self {
        use prolab_core::Error as E;
        match e {
            E::NonFinite { .. } | E::NumericalDomain(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}
