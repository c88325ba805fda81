use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: field `{field}` {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("class {class} has {count} samples, fewer than the {clients} clients")]
    ClassTooSmall { class: usize, count: usize, clients: usize },

    #[error("indicator row for class {class} stayed empty after {attempts} redraws")]
    EmptyIndicatorRow { class: usize, attempts: usize },

    #[error("aggregation requires positive total weight")]
    ZeroTotalWeight,

    #[error("cannot train on an empty data set")]
    EmptyTrainingData,

    #[error("invalid filter parameters: {0}")]
    InvalidFilter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
