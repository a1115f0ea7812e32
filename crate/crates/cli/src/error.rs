use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Dependency(String),

    #[error(transparent)]
    Core(#[from] csm_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        CliError::Json {
            path: path.into(),
            source,
        }
    }

    /// 2 validation, 3 backend, 4 dependency or staleness, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Json { .. } => 2,
            CliError::Dependency(_) => 4,
            CliError::Core(e) if e.is_backend() => 3,
            CliError::Core(csm_core::Error::Io { .. }) => 1,
            CliError::Core(_) => 2,
            CliError::Io { .. } => 1,
        }
    }
}
