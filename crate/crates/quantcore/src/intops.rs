//! True integer-domain matmul and convolution.
//!
//! Operands are quantized to integers, the contraction accumulates in 64-bit
//! signed integers, and a single rescale maps the result back to reals:
//! `out[m, n] = acc[m, n] / (s_a * s_w[n])`.
//!
//! For the product to factor out of the integer sum, the activation scale
//! must be constant along the contracted axis, so activations here use one
//! shared (per-tensor) scale; weights keep per-output-channel scales, which
//! never enter the contraction. Convolution reuses the same kernel through
//! the patch-extraction lowering of `nnkit::conv`.

use nnkit::conv::{im2col, ConvGeometry, Padding};
use nnkit::{linalg, Scalar, Tensor};

use crate::calibrate::weight_bounds;
use crate::error::QuantError;
use crate::precision::{IntPrecision, Precision};
use crate::quantize::{compute_scales, fake_quantize, round_half_away, ScaleVector, BOUND_EPSILON};

/// Activation-side quantization choice for an integer-domain op.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActQuant<E: Scalar> {
    /// Operand passes through unquantized.
    Full,
    /// Quantize with one shared clipping bound for the whole tensor
    /// (calibrated or dynamic).
    Quantized { precision: IntPrecision, bound: E },
}

/// Weight-side quantization choice; bounds are always the per-output-channel
/// max-abs of the current tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightQuant {
    Full,
    Quantized(IntPrecision),
}

/// Rejects contractions whose worst-case accumulation `k * hi_a * hi_w`
/// exceeds the signed 64-bit accumulator.
pub fn check_accumulator(k: usize, hi_a: i32, hi_w: i32) -> Result<(), QuantError> {
    let worst = k as i128 * hi_a as i128 * hi_w as i128;
    if worst > i64::MAX as i128 {
        return Err(QuantError::AccumulatorOverflow { k, hi_a, hi_w });
    }
    Ok(())
}

fn scalar_scale<E: Scalar>(bound: E, hi: i32) -> Result<E, QuantError> {
    if bound < E::zero() || !bound.is_finite() {
        return Err(QuantError::InvalidBound { got: bound.to_f64() });
    }
    Ok(E::from_f64(hi as f64) / bound.max(E::from_f64(BOUND_EPSILON)))
}

#[inline]
fn quantize_flat<E: Scalar>(data: &[E], scale: E, lo: i32, hi: i32) -> Vec<i32> {
    let (lo_e, hi_e) = (E::from_f64(lo as f64), E::from_f64(hi as f64));
    data.iter()
        .map(|&v| round_half_away(v * scale).max(lo_e).min(hi_e).to_f64() as i32)
        .collect()
}

/// Per-output-channel fake quantization of a `[k, n]` weight matrix with
/// dynamic max-abs bounds. Returns the fake-quantized weights, their scales,
/// and the bounds.
pub fn fake_quantize_weights<E: Scalar>(
    w: &Tensor<E>,
    precision: IntPrecision,
) -> Result<(Tensor<E>, ScaleVector<E>, Vec<E>), QuantError> {
    let bounds = weight_bounds(w, w.shape().len() - 1)?;
    let scales = compute_scales(&bounds, &Precision::Int(precision))?;
    let fq = fake_quantize(w, &scales, precision.range(), w.shape().len() - 1)?;
    Ok((fq, scales, bounds))
}

/// Matrix product with optional weight and activation quantization.
///
/// With both sides quantized the product runs in the true integer domain;
/// the result equals `matmul(fake_quantize(a), fake_quantize(w))` up to
/// floating-point summation order. With either side `Full` that operand
/// passes through unquantized.
pub fn quantized_matmul<E: Scalar>(
    a: &Tensor<E>,
    w: &Tensor<E>,
    a_cfg: &ActQuant<E>,
    w_cfg: &WeightQuant,
) -> Result<Tensor<E>, QuantError> {
    let (m, k) = match a.shape() {
        [m, k] => (*m, *k),
        other => {
            return Err(QuantError::Nn(nnkit::NnError::RankMismatch {
                op: "quantized_matmul",
                expected: 2,
                got: other.to_vec(),
            }))
        }
    };
    let (kw, n) = match w.shape() {
        [k2, n] => (*k2, *n),
        other => {
            return Err(QuantError::Nn(nnkit::NnError::RankMismatch {
                op: "quantized_matmul",
                expected: 2,
                got: other.to_vec(),
            }))
        }
    };
    if k != kw {
        return Err(QuantError::Nn(nnkit::NnError::ShapeMismatch {
            op: "quantized_matmul",
            expected: format!("inner dims to agree, lhs {:?}", a.shape()),
            got: format!("rhs {:?}", w.shape()),
        }));
    }

    match (a_cfg, w_cfg) {
        (ActQuant::Full, WeightQuant::Full) => Ok(linalg::matmul(a, w)?),
        (ActQuant::Full, WeightQuant::Quantized(wp)) => {
            let (wq, _, _) = fake_quantize_weights(w, *wp)?;
            Ok(linalg::matmul(a, &wq)?)
        }
        (ActQuant::Quantized { precision, bound }, WeightQuant::Full) => {
            let ra = precision.range();
            let sa = scalar_scale(*bound, ra.hi)?;
            let aq = quantize_flat(a.data(), sa, ra.lo, ra.hi);
            let af: Vec<E> = aq.iter().map(|&q| E::from_f64(q as f64) / sa).collect();
            Ok(linalg::matmul(&Tensor::from_vec(a.shape(), af)?, w)?)
        }
        (ActQuant::Quantized { precision, bound }, WeightQuant::Quantized(wp)) => {
            let ra = precision.range();
            let rw = wp.range();
            check_accumulator(k, ra.hi, rw.hi)?;

            let sa = scalar_scale(*bound, ra.hi)?;
            let w_bounds = weight_bounds(w, 1)?;
            let sw = compute_scales(&w_bounds, &Precision::Int(*wp))?;

            let qa = quantize_flat(a.data(), sa, ra.lo, ra.hi);
            let sw_v = sw.values();
            let qw: Vec<i32> = w
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let s = sw_v[i % n];
                    round_half_away(v * s)
                        .max(E::from_f64(rw.lo as f64))
                        .min(E::from_f64(rw.hi as f64))
                        .to_f64() as i32
                })
                .collect();

            // integer accumulation, fixed i-k-j order
            let mut acc = vec![0i64; m * n];
            for i in 0..m {
                for p in 0..k {
                    let av = qa[i * k + p] as i64;
                    if av == 0 {
                        continue;
                    }
                    let wrow = &qw[p * n..(p + 1) * n];
                    let arow = &mut acc[i * n..(i + 1) * n];
                    for (o, &wv) in arow.iter_mut().zip(wrow) {
                        *o += av * wv as i64;
                    }
                }
            }

            let mut out = vec![E::zero(); m * n];
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] = E::from_f64(acc[i * n + j] as f64) / (sa * sw_v[j]);
                }
            }
            Ok(Tensor::from_vec(&[m, n], out)?)
        }
    }
}

/// Quantized NHWC convolution via the patch-extraction lowering: patches of
/// `x` against the kernel viewed as `[Kh*Kw*Cin, Cout]`, sharing
/// [`quantized_matmul`]. Zero padding stays exactly zero in the integer
/// domain because no zero-point shift is applied.
pub fn quantized_conv2d<E: Scalar>(
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    stride: usize,
    padding: Padding,
    a_cfg: &ActQuant<E>,
    w_cfg: &WeightQuant,
) -> Result<Tensor<E>, QuantError> {
    let geo = ConvGeometry::resolve(x, kernel, stride, padding)?;
    let patches = im2col(x, &geo);
    let k2d = kernel
        .clone()
        .reshape(&[geo.patch_len(), geo.c_out])
        .expect("HWIO kernel reshape");
    let out = quantized_matmul(&patches, &k2d, a_cfg, w_cfg)?;
    Ok(out
        .reshape(&[geo.batch, geo.out_h, geo.out_w, geo.c_out])
        .expect("conv output reshape"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precision::Signedness;

    fn int8() -> IntPrecision {
        IntPrecision::new(8, Signedness::Signed).unwrap()
    }

    #[test]
    fn accumulator_guard_triggers_on_worst_case() {
        assert!(check_accumulator(1024, 127, 127).is_ok());
        // 2^33 * 32767^2 sits just below i64::MAX; 2^34 crosses it
        assert!(check_accumulator(1 << 33, 32767, 32767).is_ok());
        assert!(check_accumulator(1 << 34, 32767, 32767).is_err());
        // boundary: k * hi_a * hi_w == i64::MAX is fine
        assert!(check_accumulator(1, i32::MAX, 1).is_ok());
    }

    #[test]
    fn full_precision_both_sides_is_exact_matmul() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_vec(&[2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let got = quantized_matmul(&a, &w, &ActQuant::Full, &WeightQuant::Full).unwrap();
        let want = linalg::matmul(&a, &w).unwrap();
        assert_eq!(got.data(), want.data());
    }

    #[test]
    fn identity_activation_recovers_dequantized_weights() {
        let a = Tensor::from_vec(&[3, 3], vec![
            1.0f64, 0.0, 0.0, //
            0.0, 1.0, 0.0, //
            0.0, 0.0, 1.0,
        ])
        .unwrap();
        let w = Tensor::from_vec(&[3, 2], vec![0.31f64, -0.7, 0.02, 0.55, -0.44, 0.11]).unwrap();
        let a_cfg = ActQuant::Quantized {
            precision: int8(),
            bound: 1.0,
        };
        let w_cfg = WeightQuant::Quantized(int8());
        let got = quantized_matmul(&a, &w, &a_cfg, &w_cfg).unwrap();
        let (wq, _, _) = fake_quantize_weights(&w, int8()).unwrap();
        for (g, e) in got.data().iter().zip(wq.data()) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn two_by_two_error_stays_within_bucket_bound() {
        // 8-bit both sides: per-element error against the exact product is
        // bounded by the propagated rounding error of each operand.
        let a = Tensor::from_vec(&[2, 2], vec![0.9f64, -0.3, 0.45, 0.12]).unwrap();
        let w = Tensor::from_vec(&[2, 2], vec![0.8, -0.55, 0.23, 0.9]).unwrap();
        let bound = 1.0;
        let a_cfg = ActQuant::Quantized {
            precision: int8(),
            bound,
        };
        let got = quantized_matmul(&a, &w, &a_cfg, &WeightQuant::Quantized(int8())).unwrap();
        let exact = linalg::matmul(&a, &w).unwrap();

        // |fq(x) - x| <= 1/(2S) per operand inside bounds; with k = 2 terms,
        // |err| <= sum over terms of (|a| * dw + |w| * da + da * dw)
        let da = bound / 127.0 / 2.0;
        let w_bounds = weight_bounds(&w, 1).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let dw = w_bounds[j] / 127.0 / 2.0;
                let mut tol = 0.0;
                for p in 0..2 {
                    tol += a.at(&[i, p]).abs() * dw + w.at(&[p, j]).abs() * da + da * dw;
                }
                let err = (got.at(&[i, j]) - exact.at(&[i, j])).abs();
                assert!(err <= tol + 1e-12, "err {err} tol {tol}");
            }
        }
    }

    #[test]
    fn conv_identity_passthrough_when_full_precision() {
        let x = Tensor::from_vec(&[1, 2, 2, 1], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = quantized_conv2d(
            &x,
            &k,
            1,
            Padding::Same,
            &ActQuant::Full,
            &WeightQuant::Full,
        )
        .unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_zero_kernel_gives_zero() {
        let x = Tensor::from_vec(&[1, 3, 3, 1], (1..=9).map(|v| v as f64).collect()).unwrap();
        let k = Tensor::from_vec(&[3, 3, 1, 1], vec![0.0f64; 9]).unwrap();
        let a_cfg = ActQuant::Quantized {
            precision: int8(),
            bound: 9.0,
        };
        let y = quantized_conv2d(
            &x,
            &k,
            1,
            Padding::Same,
            &a_cfg,
            &WeightQuant::Quantized(int8()),
        )
        .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_matches_hand_sliding_window_on_quantized_operands() {
        // single-channel 3x3 kernel over 4x4 input, VALID: compare the
        // integer path against a brute-force window sum of the
        // fake-quantized operands.
        let x = Tensor::from_vec(
            &[1, 4, 4, 1],
            vec![
                0.1f64, 0.5, -0.2, 0.8, //
                0.4, -0.9, 0.3, 0.2, //
                -0.5, 0.6, 0.7, -0.1, //
                0.05, -0.3, 0.9, -0.6,
            ],
        )
        .unwrap();
        let k = Tensor::from_vec(
            &[3, 3, 1, 1],
            vec![0.2f64, -0.1, 0.3, 0.0, 0.5, -0.4, 0.1, 0.25, -0.2],
        )
        .unwrap();
        let bound = 1.0;
        let a_cfg = ActQuant::Quantized {
            precision: int8(),
            bound,
        };
        let w_cfg = WeightQuant::Quantized(int8());
        let got = quantized_conv2d(&x, &k, 1, Padding::Valid, &a_cfg, &w_cfg).unwrap();

        let sa = 127.0 / bound;
        let xq = x.map(|v| (v * sa).round().clamp(-127.0, 127.0) / sa);
        let kb = k.data().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let sk = 127.0 / kb;
        let kq = k.map(|v| (v * sk).round().clamp(-127.0, 127.0) / sk);
        for oh in 0..2 {
            for ow in 0..2 {
                let mut acc = 0.0;
                for kh in 0..3 {
                    for kw in 0..3 {
                        acc += xq.at(&[0, oh + kh, ow + kw, 0]) * kq.at(&[kh, kw, 0, 0]);
                    }
                }
                let got_v = got.at(&[0, oh, ow, 0]);
                assert!((got_v - acc).abs() < 1e-12, "{got_v} vs {acc}");
            }
        }
    }
}
