use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("incomplete input: {0}")]
    IncompleteInput(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty topic set: {0}")]
    EmptyTopics(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("backend error for request {key}: {message}")]
    Backend { key: String, message: String },

    #[error("backend returned empty output for request {key}")]
    EmptyOutput { key: String },

    #[error("malformed entailment verdict: {0:?}")]
    MalformedVerdict(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that came from an external model backend.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::Backend { .. } | Error::EmptyOutput { .. } | Error::MalformedVerdict(_)
        )
    }
}
