use std::path::PathBuf;

use dml_autodiff::AutodiffError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("model: {0}")]
    Model(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("no gradient for trainable parameter `{0}`")]
    MissingGradient(String),

    #[error("gradient supplied for unknown or frozen parameter `{0}`")]
    UnexpectedGradient(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("seed {seed} diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged {
        seed: u64,
        epoch: usize,
        step: usize,
        loss: f64,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
