use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A file is missing a required column or record field.
    #[error("schema error in {path}: {message}")]
    Schema { path: String, message: String },

    /// A row carries a value that cannot be interpreted.
    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("unknown target {target:?}; available targets: {available:?}")]
    UnknownTarget { target: String, available: Vec<String> },

    /// A caller violated a dimension or range precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint error at {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn schema(path: impl AsRef<std::path::Path>, msg: impl Into<String>) -> Self {
        Error::Schema {
            path: path.as_ref().display().to_string(),
            message: msg.into(),
        }
    }
}
