use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid skeleton: {0}")]
    Skeleton(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular model: state {state}: {msg}")]
    Singular { state: usize, msg: String },

    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("segmentation failure in frames {start}..{end}: {msg}")]
    Segmentation { start: usize, end: usize, msg: String },

    #[error("tracking lost")]
    TrackingLost,

    #[error("model file: {0}")]
    Model(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
