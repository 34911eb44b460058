//! Uniform integer quantization.
//!
//! The pipeline is scale → clip → round → rescale, with per-channel scales
//! and no zero-point shift (so zero is always preserved exactly). Matmul and
//! convolution have a true integer-domain path whose accumulation runs in
//! wide integer arithmetic, plus straight-through-estimator gradients for
//! training. Calibration of activation clipping bounds (per-channel EMA of
//! max-abs, frozen once) lives in [`calibrate`].

pub mod calibrate;
pub mod error;
pub mod intops;
pub mod precision;
pub mod quantize;
pub mod ste;
pub mod tape_ops;

pub use calibrate::{weight_bounds, BoundsState, CalibrationSchedule, EmaTracker};
pub use error::QuantError;
pub use intops::{check_accumulator, quantized_conv2d, quantized_matmul, ActQuant, WeightQuant};
pub use precision::{IntPrecision, Precision, QuantRange, Signedness};
pub use quantize::{
    compute_scales, dequantize, fake_quantize, quantize_to_int, round_half_away, QuantizedTensor,
    ScaleVector, BOUND_EPSILON,
};
pub use ste::{ste_backward, ste_mask};
