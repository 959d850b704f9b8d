use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum FadsError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("layer `{layer}`: {message}")]
    Layer { layer: String, message: String },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("graph parse error at line {line}, column {column}: {message}")]
    GraphParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("weight file format error: {0}")]
    Format(String),

    #[error("weight file truncated: expected at least {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("image `{path}`: {message}")]
    Image { path: PathBuf, message: String },

    #[error("io error on `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FadsError>;

impl FadsError {
    pub(crate) fn layer(layer: impl Into<String>, message: impl Into<String>) -> Self {
        FadsError::Layer {
            layer: layer.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FadsError::Io {
            path: path.into(),
            source,
        }
    }
}
