use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at layer {layer}: expected {expected}, got {got}")]
    LayerDimension {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("forward cache does not belong to this stack ({0})")]
    StaleCache(&'static str),

    #[error("signal length {0} is odd; real/imaginary packing needs an even length")]
    OddLength(usize),

    #[error("power budget must be non-negative, got {0}")]
    NegativePower(f64),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("power scaling factor must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("CQI side input mismatch: {0}")]
    CqiMode(&'static str),

    #[error("expected {expected} edge nodes, got {got}")]
    NodeCount { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
