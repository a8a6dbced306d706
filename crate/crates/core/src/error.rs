use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("need at least {needed} reference points, got {available}")]
    NotEnoughPoints { needed: usize, available: usize },

    #[error("voxel index {index:?} outside grid resolution {resolution:?}")]
    VoxelOutOfRange {
        index: [usize; 3],
        resolution: [usize; 3],
    },

    #[error("malformed KITTI scan {path}: {len} bytes is not a multiple of 16")]
    MalformedScan { path: PathBuf, len: u64 },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
