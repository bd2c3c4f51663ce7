use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Snapshot of the training state captured when a step produces a non-finite loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub loss: f64,
    pub max_abs_param: f64,
    pub grad_norm: f64,
    pub config: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid genotype: {0}")]
    InvalidGenotype(String),
    #[error("value not in search space: {0}")]
    NotInSearchSpace(String),
    #[error("genotypes belong to different search spaces")]
    SpaceMismatch,
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("objective vector contains NaN")]
    InvalidObjective,
    #[error("cannot select {requested} survivors from {available} individuals")]
    InsufficientPopulation { requested: usize, available: usize },
    #[error("config exceeds the maximal supernet: {0}")]
    ConfigTooLarge(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged (loss {}) for {}", .0.loss, .0.config)]
    Divergence(Box<DivergenceReport>),
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error("token grid has no spatial shape metadata")]
    MissingShape,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("device {device} is not leased by the caller")]
    IsolationViolation { device: usize },
    #[error("latency measurement failed: {0}")]
    Measurement(String),
    #[error("incomplete evaluation: {0}")]
    IncompleteEvaluation(String),
    #[error("unsupported checkpoint: {0}")]
    UnsupportedCheckpoint(String),
    #[error("checkpoint checksum mismatch in {0}")]
    Checksum(PathBuf),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
