use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("record {id}: {message}")]
    Record { id: String, message: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown parameter {0}")]
    MissingParam(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("zero-norm {what} encountered in {context}")]
    ZeroNorm { what: String, context: String },
    #[error("batch of {0} rows is too small; batch statistics need at least 2")]
    BatchTooSmall(usize),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
