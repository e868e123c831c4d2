use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("no static pixels retained by mask")]
    NoStaticPixels,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("scene is frozen")]
    SceneFrozen,

    #[error("scene must be frozen before pose optimization")]
    SceneNotFrozen,

    #[error("render aux records do not match the backward call: {0}")]
    AuxMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("window chaining: {0}")]
    Chain(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unsupported tensor format in {path}: {msg}")]
    UnsupportedFormat { path: PathBuf, msg: String },

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
