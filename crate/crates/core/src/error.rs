use std::io;

use thiserror::Error;

pub type Result<T, E = SharcError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SharcError {
    #[error("empty input")]
    EmptyInput,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not an IDX file: {0}")]
    NotIdx(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("insufficient classes: need {required}, found {available}")]
    InsufficientClasses { required: usize, available: usize },

    #[error("no precomputed features for key {0}")]
    MissingKey(usize),

    #[error("sampling from an empty buffer")]
    EmptyBuffer,

    #[error("pattern entry {value} at index {index} is not bipolar")]
    NonBipolar { index: usize, value: f64 },

    #[error("write diverged: energy {energy} exceeded 10x initial {initial}")]
    WriteDiverged { initial: f64, energy: f64 },

    #[error("GEM projection did not converge: worst constraint violation {violation:e}")]
    GemNotConverged { violation: f64 },

    #[error("BWT undefined for a single task")]
    BwtUndefined,

    #[error("accuracy matrix row {0} is not populated")]
    UnpopulatedRow(usize),

    #[error("strategy {strategy} requires replay data at task {task}")]
    MissingReplay { strategy: String, task: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SharcError {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        SharcError::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
