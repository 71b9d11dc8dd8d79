use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

/// Command failure classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, manifest, input data or output location.
    #[error("{0}")]
    Input(#[source] efanet::Error),

    #[error("{0}")]
    Checkpoint(#[source] efanet::Error),

    #[error("numeric failure at step {step}: {source}; last good checkpoint: {}", last_good.display())]
    Numeric {
        step: u64,
        last_good: PathBuf,
        #[source]
        source: efanet::Error,
    },

    #[error("{0}")]
    Internal(#[source] efanet::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Input(_) => 2,
            Self::Checkpoint(_) => 3,
            Self::Numeric { .. } => 4,
            Self::Internal(_) => 1,
        }
    }

    pub fn to_exit(&self) -> ExitCode {
        ExitCode::from(self.exit_code())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Tags a core error with the command-level category it belongs to.
pub(crate) trait Classify<T> {
    fn input(self) -> CliResult<T>;
    fn checkpoint(self) -> CliResult<T>;
    fn internal(self) -> CliResult<T>;
}

impl<T> Classify<T> for efanet::Result<T> {
    fn input(self) -> CliResult<T> {
        self.map_err(CliError::Input)
    }

    fn checkpoint(self) -> CliResult<T> {
        self.map_err(CliError::Checkpoint)
    }

    fn internal(self) -> CliResult<T> {
        self.map_err(CliError::Internal)
    }
}
