use std::path::PathBuf;

use crate::autodiff::TensorError;
use crate::geometry::GeometryError;
use crate::partition::PartitionError;
use crate::training::CheckpointError;

/// Errors raised by the model and training layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no valid part pairs to supervise")]
    NoValidPairs,
    #[error("non-finite loss on sample {sample}")]
    NonFiniteLoss { sample: String },
    #[error("checkpoint has {expected} classes but the dataset has {got}")]
    ClassMismatch { expected: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(message: impl Into<String>) -> Self {
        Self::Config(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
