use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the mapping, retrieval and navigation engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent or invalid configuration (dimensions, parameters).
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid caller input (empty query, unknown label, bad pixel data).
    #[error("input error: {0}")]
    Input(String),

    /// Malformed binary or text file.
    #[error("format error at offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    /// Remote embedder unreachable or returned an unusable response.
    #[error("transport error: {0}")]
    Transport(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
