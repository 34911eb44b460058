use nnkit::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("invalid precision: {bits}-bit {signedness} (signed needs 2..=16 bits, unsigned 1..=16)")]
    InvalidPrecision { bits: u8, signedness: &'static str },

    #[error("full precision carries no integer range")]
    FullPrecisionHasNoRange,

    #[error("clipping bound must be nonnegative and finite, got {got}")]
    InvalidBound { got: f64 },

    #[error("scale vector has {got} entries but channel axis {axis} has {expected}")]
    ScaleChannelMismatch {
        expected: usize,
        got: usize,
        axis: usize,
    },

    #[error("channel axis {axis} out of range for shape {shape:?}")]
    BadChannelAxis { axis: usize, shape: Vec<usize> },

    #[error(
        "integer accumulator would overflow: k={k} * {hi_a} * {hi_w} exceeds the 64-bit range"
    )]
    AccumulatorOverflow { k: usize, hi_a: i32, hi_w: i32 },

    #[error("empty tensor where data is required")]
    EmptyTensor,

    #[error("EMA decay must lie in (0, 1), got {got}")]
    InvalidDecay { got: f64 },

    #[error("calibration schedule needs 0 < freeze step < total steps, got N={freeze} of {total}")]
    InvalidSchedule { freeze: usize, total: usize },

    #[error(transparent)]
    Nn(#[from] NnError),
}
