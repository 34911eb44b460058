use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("cost model: unsupported bit width {0} (expected 4, 8 or 16)")]
    UnsupportedBits(u8),

    #[error("cost model: {op} called on a {got} layer")]
    WrongLayerKind { op: &'static str, got: &'static str },

    #[error("cost model: empty layer-shape list")]
    EmptyShapes,

    #[error("cost model: reports do not describe the same layers ({0})")]
    LayerMismatch(String),

    #[error("pareto: empty point set")]
    EmptyPoints,

    #[error("pareto: duplicate label {0:?}")]
    DuplicateLabel(String),

    #[error("pareto: invalid point {label:?} (cost {cost}, accuracy {accuracy})")]
    InvalidPoint {
        label: String,
        cost: f64,
        accuracy: f64,
    },

    #[error("dataset: file {path} has a truncated record ({len} bytes is not a multiple of {record})")]
    TruncatedRecord {
        path: PathBuf,
        len: u64,
        record: u64,
    },

    #[error("dataset: label {label} out of range for {classes} classes in {path}")]
    DatasetLabel {
        path: PathBuf,
        label: u8,
        classes: usize,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("training diverged: loss was NaN at step {step}")]
    Diverged { step: usize },

    #[error("evaluation stream is empty")]
    EmptyEvalStream,

    #[error(transparent)]
    Nn(#[from] nnkit::NnError),

    #[error(transparent)]
    Quant(#[from] quantcore::QuantError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
