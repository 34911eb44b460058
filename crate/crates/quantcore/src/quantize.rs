//! Scale computation and the quantize / dequantize maps.

use nnkit::{Scalar, Tensor};

use crate::error::QuantError;
use crate::precision::{Precision, QuantRange};

/// Clipping bounds below this floor are replaced by it so scales stay finite
/// and positive; an all-zero channel then quantizes to all zeros.
pub const BOUND_EPSILON: f64 = 1e-6;

/// The rounding rule for the whole crate: round half away from zero.
///
/// Symmetric around zero, matching the symmetric integer range. Swap the
/// body for `round_ties_even` here if round-half-to-even is ever needed;
/// every quantization path routes through this function.
#[inline]
pub fn round_half_away<E: Scalar>(x: E) -> E {
    x.round()
}

/// Per-output-channel scale factors; entry `c` maps real input `x` to the
/// integer domain via `x * s[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleVector<E: Scalar>(Vec<E>);

impl<E: Scalar> ScaleVector<E> {
    /// Wraps raw scales, enforcing positivity and finiteness.
    pub fn new(scales: Vec<E>) -> Result<Self, QuantError> {
        if scales.is_empty() {
            return Err(QuantError::EmptyTensor);
        }
        for &s in &scales {
            if !(s > E::zero()) || !s.is_finite() {
                return Err(QuantError::InvalidBound { got: s.to_f64() });
            }
        }
        Ok(ScaleVector(scales))
    }

    pub fn values(&self) -> &[E] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-channel scales from clipping bounds: `s = range.hi / bound`, with
/// bounds floored at [`BOUND_EPSILON`]. No zero-point shift is ever applied.
pub fn compute_scales<E: Scalar>(
    bounds: &[E],
    precision: &Precision,
) -> Result<ScaleVector<E>, QuantError> {
    let range = precision.quant_range()?;
    let hi = E::from_f64(range.hi as f64);
    let eps = E::from_f64(BOUND_EPSILON);
    let mut scales = Vec::with_capacity(bounds.len());
    for &b in bounds {
        if b < E::zero() || !b.is_finite() {
            return Err(QuantError::InvalidBound { got: b.to_f64() });
        }
        scales.push(hi / b.max(eps));
    }
    ScaleVector::new(scales)
}

/// Integer-valued tensor with the metadata needed to map it back to reals.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor<E: Scalar> {
    values: Vec<i32>,
    shape: Vec<usize>,
    range: QuantRange,
    scales: ScaleVector<E>,
    channel_axis: usize,
}

impl<E: Scalar> QuantizedTensor<E> {
    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn range(&self) -> QuantRange {
        self.range
    }

    pub fn scales(&self) -> &ScaleVector<E> {
        &self.scales
    }

    pub fn channel_axis(&self) -> usize {
        self.channel_axis
    }
}

fn check_channel_axis<E: Scalar>(
    x: &Tensor<E>,
    scales: &ScaleVector<E>,
    channel_axis: usize,
) -> Result<(usize, usize), QuantError> {
    let shape = x.shape();
    if channel_axis >= shape.len() {
        return Err(QuantError::BadChannelAxis {
            axis: channel_axis,
            shape: shape.to_vec(),
        });
    }
    if scales.len() != shape[channel_axis] {
        return Err(QuantError::ScaleChannelMismatch {
            expected: shape[channel_axis],
            got: scales.len(),
            axis: channel_axis,
        });
    }
    Ok((x.stride_of(channel_axis), shape[channel_axis]))
}

#[inline]
fn quantize_value<E: Scalar>(x: E, s: E, range: QuantRange) -> E {
    let lo = E::from_f64(range.lo as f64);
    let hi = E::from_f64(range.hi as f64);
    let q = round_half_away(x * s).max(lo).min(hi);
    // the integer domain has no negative zero; round(-eps) must not leak one
    if q == E::zero() {
        E::zero()
    } else {
        q
    }
}

/// Scale, clip, round, rescale: `clamp(round(x*s), lo, hi) / s` per channel.
/// Idempotent, preserves zero exactly, monotone per channel.
pub fn fake_quantize<E: Scalar>(
    x: &Tensor<E>,
    scales: &ScaleVector<E>,
    range: QuantRange,
    channel_axis: usize,
) -> Result<Tensor<E>, QuantError> {
    let (stride, dim) = check_channel_axis(x, scales, channel_axis)?;
    let sv = scales.values();
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let s = sv[nnkit::tensor::channel_of(i, stride, dim)];
        *v = quantize_value(*v, s, range) / s;
    }
    Ok(out)
}

/// Scale, clip and round, keeping the integer domain:
/// `values = clamp(round(x*s), lo, hi)`.
pub fn quantize_to_int<E: Scalar>(
    x: &Tensor<E>,
    scales: &ScaleVector<E>,
    range: QuantRange,
    channel_axis: usize,
) -> Result<QuantizedTensor<E>, QuantError> {
    let (stride, dim) = check_channel_axis(x, scales, channel_axis)?;
    let sv = scales.values();
    let values = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let s = sv[nnkit::tensor::channel_of(i, stride, dim)];
            quantize_value(v, s, range).to_f64() as i32
        })
        .collect();
    Ok(QuantizedTensor {
        values,
        shape: x.shape().to_vec(),
        range,
        scales: scales.clone(),
        channel_axis,
    })
}

/// Map integers back to reals: `values / s` per channel. Bit-exact inverse
/// of the rescale step of [`fake_quantize`] under identical arithmetic.
pub fn dequantize<E: Scalar>(q: &QuantizedTensor<E>) -> Tensor<E> {
    let stride: usize = q.shape[q.channel_axis + 1..].iter().product();
    let dim = q.shape[q.channel_axis];
    let sv = q.scales.values();
    let data = q
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let s = sv[nnkit::tensor::channel_of(i, stride, dim)];
            E::from_f64(v as f64) / s
        })
        .collect();
    Tensor::from_vec(&q.shape, data).expect("quantized tensor shape consistent")
}
