//! Straight-through estimator: the gradient of the quantize-dequantize map
//! is treated as identity inside the clipping window and zero where the
//! forward pass clipped.

use nnkit::{Scalar, Tensor};

use crate::error::QuantError;
use crate::precision::Signedness;

/// 0/1 pass-through mask. Signed windows pass `|x| <= bound` per channel;
/// unsigned windows pass `0 <= x <= bound`.
pub fn ste_mask<E: Scalar>(
    x: &Tensor<E>,
    bounds: &[E],
    channel_axis: usize,
    signedness: Signedness,
) -> Result<Tensor<E>, QuantError> {
    let shape = x.shape();
    if channel_axis >= shape.len() {
        return Err(QuantError::BadChannelAxis {
            axis: channel_axis,
            shape: shape.to_vec(),
        });
    }
    if bounds.len() != shape[channel_axis] {
        return Err(QuantError::ScaleChannelMismatch {
            expected: shape[channel_axis],
            got: bounds.len(),
            axis: channel_axis,
        });
    }
    let stride = x.stride_of(channel_axis);
    let dim = shape[channel_axis];
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let b = bounds[nnkit::tensor::channel_of(i, stride, dim)];
        let inside = match signedness {
            Signedness::Signed => v.abs() <= b,
            Signedness::Unsigned => *v >= E::zero() && *v <= b,
        };
        *v = if inside { E::one() } else { E::zero() };
    }
    Ok(out)
}

/// Gradient pass-through: `grad_out` where the forward pass did not clip,
/// zero elsewhere.
pub fn ste_backward<E: Scalar>(
    grad_out: &Tensor<E>,
    x: &Tensor<E>,
    bounds: &[E],
    channel_axis: usize,
    signedness: Signedness,
) -> Result<Tensor<E>, QuantError> {
    if grad_out.shape() != x.shape() {
        return Err(QuantError::Nn(nnkit::NnError::ShapeMismatch {
            op: "ste_backward",
            expected: format!("{:?}", x.shape()),
            got: format!("{:?}", grad_out.shape()),
        }));
    }
    let mask = ste_mask(x, bounds, channel_axis, signedness)?;
    Ok(grad_out.zip_map(&mask, |g, m| g * m)?)
}
