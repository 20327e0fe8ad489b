use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the encoding, model and training stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid apex {apex} for a sequence of {len} frames")]
    InvalidApex { apex: usize, len: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("graph already consumed by a previous backward pass; run a new forward first")]
    StaleGraph,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("manifest row {row}: {message}")]
    ManifestRow { row: usize, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("metrics undefined for an empty confusion matrix")]
    UndefinedMetrics,

    #[error("fold '{subject}': {source}")]
    Fold {
        subject: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::InvalidShape(msg.into())
    }

    pub(crate) fn fold(subject: &str, source: Error) -> Self {
        Error::Fold { subject: subject.to_owned(), source: Box::new(source) }
    }
}
