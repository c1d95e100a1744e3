use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: backward called before forward")]
    BackwardBeforeForward { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model descriptor: {0}")]
    InvalidDescriptor(String),

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("config error at line {line}, column {col}, field `{field}`: {msg}")]
    Config {
        line: usize,
        col: usize,
        field: String,
        msg: String,
    },

    #[error("transform #{position} (line {line}): {msg}")]
    Validation {
        position: usize,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
