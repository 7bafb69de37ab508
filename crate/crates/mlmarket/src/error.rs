use std::path::PathBuf;

use thiserror::Error;

/// Failures of the std layer, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("numerical failure at step {step}: {detail}")]
    Numerical { step: u64, detail: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Parse { .. } => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<mlmarket_core::Error> for CliError {
    fn from(e: mlmarket_core::Error) -> Self {
        match e {
            mlmarket_core::Error::InvalidInput(msg) => CliError::Config(msg),
            mlmarket_core::Error::Numerical { step, detail } => CliError::Numerical { step, detail },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
