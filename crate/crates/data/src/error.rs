use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {detail}")]
    Invalid { path: PathBuf, detail: String },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Tensor(#[from] ukan_core::TensorError),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        DataError::Invalid { path: path.into(), detail: detail.into() }
    }
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;
