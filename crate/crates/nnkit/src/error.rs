use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("{op}: expected rank-{expected} tensor, got shape {got:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },

    #[error("tensor data length {data_len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, data_len: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward requires a scalar loss, got shape {got:?}")]
    NonScalarLoss { got: Vec<usize> },

    #[error("batch normalization in training mode needs a batch of at least 2, got {got}")]
    BatchTooSmall { got: usize },

    #[error("{what} must be positive, got {got}")]
    NonPositive { what: &'static str, got: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
