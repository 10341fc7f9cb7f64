use crate::checkpoint::CheckpointError;
use crate::data::DataError;
use crate::skeleton::SkeletonError;
use crate::tensor::TensorError;

/// Error type of the model, training and evaluation layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("training diverged at epoch {epoch}, step {step}: {what} is not finite")]
    Divergence { epoch: usize, step: usize, what: String },
    #[error("horizon: {0}")]
    Horizon(String),
    #[error("report: {0}")]
    Report(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_error(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}
