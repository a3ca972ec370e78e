use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no examples found under {0}")]
    NoExamples(PathBuf),

    #[error("malformed dataset {path}: {reason}")]
    MalformedDataset { path: PathBuf, reason: String },

    #[error("inconsistent image dimensions: expected {expected:?}, found {found:?} in {path}")]
    InconsistentDimensions {
        path: PathBuf,
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },

    #[error("cannot split {classes} classes into {tasks} equal tasks")]
    IndivisibleClasses { classes: usize, tasks: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("domain-aware augmentation requested with an empty stream batch")]
    EmptyStreamBatch,

    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),

    #[error("source id {0} has a single view; every source needs at least two")]
    SingletonSource(u64),

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("embedding {index} has norm {norm}, expected unit norm")]
    NotNormalized { index: usize, norm: f64 },

    #[error("style model: {0}")]
    StyleModel(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("classifier has not been fitted")]
    UnfittedClassifier,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite loss {value} at step {step} (batch of {views} views, memory fill {memory_fill})")]
    NonFiniteLoss {
        step: usize,
        value: f64,
        views: usize,
        memory_fill: usize,
    },

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("seed {seed} failed: {message}")]
    RunFailed { seed: u64, message: String },

    #[error("tensor backend: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("serialization: {0}")]
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
