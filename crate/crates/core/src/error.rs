use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {dim} expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("batch norm running statistics for `{0}` are uninitialized")]
    UninitializedStats(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed image: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: [usize; 4],
        found: [usize; 4],
    },

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate map: {0}")]
    Degenerate(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure_dim(
    op: &'static str,
    dim: &'static str,
    expected: usize,
    actual: usize,
) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            dim,
            expected,
            actual,
        })
    }
}
