use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ara_core::Error),

    /// Flags that parse but do not form a valid request.
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 success, 1 internal failure, 2 user or input error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(ara_core::Error::Divergence { .. }) | CliError::Internal(_) => 1,
            _ => 2,
        }
    }
}
