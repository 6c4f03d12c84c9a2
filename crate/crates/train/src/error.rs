use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: u64 },

    #[error("non-finite gradient for {param} at step {step}")]
    NonFiniteGrad { param: String, step: u64 },

    #[error(transparent)]
    Data(#[from] ukan_data::DataError),

    #[error(transparent)]
    Tensor(#[from] ukan_core::TensorError),
}

impl TrainError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TrainError::Io { path: path.into(), source }
    }

    /// Short stable tag for the machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            TrainError::Config(_) => "config",
            TrainError::Io { .. } => "io",
            TrainError::Checkpoint { .. } => "checkpoint",
            TrainError::NonFiniteLoss { .. } => "nan-loss",
            TrainError::NonFiniteGrad { .. } => "nan-grad",
            TrainError::Data(_) => "data",
            TrainError::Tensor(_) => "tensor",
        }
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
