use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = SessionError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("referenced path does not exist: {0}")]
    MissingPath(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no nuance model configured; train one or enable calibration_only")]
    MissingModel,

    #[error("inconsistent sample rates: {0}")]
    SampleRates(String),

    #[error(transparent)]
    Core(#[from] corpusnil_core::Error),
}

impl SessionError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SessionError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        SessionError::Json {
            path: path.into(),
            source,
        }
    }

    /// The file the error is about, when there is one.
    pub fn path(&self) -> Option<&Path> {
        match self {
            SessionError::Io { path, .. }
            | SessionError::Json { path, .. }
            | SessionError::MissingPath(path) => Some(path),
            SessionError::Core(corpusnil_core::Error::Io { path, .. })
            | SessionError::Core(corpusnil_core::Error::UnsupportedFormat { path, .. })
            | SessionError::Core(corpusnil_core::Error::EmptyRecording(path)) => Some(path),
            _ => None,
        }
    }
}
