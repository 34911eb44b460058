//! Quantized operations recorded on the autodiff tape.
//!
//! The fake-quantization node forwards through the quantize-dequantize map
//! and backpropagates with the straight-through estimator. The integer-
//! domain nodes compute their forward value with the true integer kernels
//! and backpropagate as if the op were a matmul/conv of the fake-quantized
//! operands, masked by the STE windows.

use nnkit::conv::{self, ConvGeometry, Padding};
use nnkit::{linalg, Graph, Scalar, Tensor, ValueId};

use crate::error::QuantError;
use crate::intops::{self, ActQuant, WeightQuant};
use crate::precision::{IntPrecision, Precision, Signedness};
use crate::quantize::{compute_scales, fake_quantize};
use crate::ste::{ste_backward, ste_mask};

/// Per-channel fake-quantization plan for one tensor.
#[derive(Debug, Clone)]
pub struct FakeQuantCfg<E: Scalar> {
    pub precision: IntPrecision,
    pub bounds: Vec<E>,
    pub channel_axis: usize,
}

/// Quantize-dequantize with straight-through gradients.
pub fn fake_quant_op<E: Scalar>(
    g: &mut Graph<E>,
    x: ValueId,
    cfg: FakeQuantCfg<E>,
) -> Result<ValueId, QuantError> {
    let scales = compute_scales(&cfg.bounds, &Precision::Int(cfg.precision))?;
    let out = fake_quantize(g.value(x), &scales, cfg.precision.range(), cfg.channel_axis)?;
    let signedness = cfg.precision.signedness();
    Ok(g.push_op(
        vec![x],
        out,
        Box::new(move |grad, parents| {
            vec![
                ste_backward(grad, parents[0], &cfg.bounds, cfg.channel_axis, signedness)
                    .expect("shapes fixed at forward"),
            ]
        }),
    ))
}

/// Quantize a weight tensor with dynamic per-output-channel max-abs bounds
/// (the output-channel axis is the last axis), straight-through gradients.
pub fn fake_quant_weights_op<E: Scalar>(
    g: &mut Graph<E>,
    w: ValueId,
    precision: IntPrecision,
) -> Result<ValueId, QuantError> {
    let axis = g.value(w).shape().len() - 1;
    let bounds = crate::calibrate::weight_bounds(g.value(w), axis)?;
    fake_quant_op(
        g,
        w,
        FakeQuantCfg {
            precision,
            bounds,
            channel_axis: axis,
        },
    )
}

fn mask_for<E: Scalar>(
    t: &Tensor<E>,
    cfg: &ActQuant<E>,
) -> Result<Option<(Tensor<E>, Tensor<E>)>, QuantError> {
    // returns (fake-quantized tensor, STE mask) or None for pass-through
    match cfg {
        ActQuant::Full => Ok(None),
        ActQuant::Quantized { precision, bound } => {
            let n = t.numel();
            let scales = compute_scales(&vec![*bound; 1], &Precision::Int(*precision))?;
            // elementwise with one shared scale: treat the flattened tensor
            // as a single channel
            let flat = t.clone().reshape(&[n, 1]).expect("flatten");
            let fq = fake_quantize(&flat, &scales, precision.range(), 1)?
                .reshape(t.shape())
                .expect("unflatten");
            let mask = ste_mask(&flat, &[*bound], 1, precision.signedness())?
                .reshape(t.shape())
                .expect("unflatten");
            Ok(Some((fq, mask)))
        }
    }
}

fn weight_fq_and_mask<E: Scalar>(
    w: &Tensor<E>,
    cfg: &WeightQuant,
) -> Result<Option<(Tensor<E>, Tensor<E>)>, QuantError> {
    match cfg {
        WeightQuant::Full => Ok(None),
        WeightQuant::Quantized(p) => {
            let axis = w.shape().len() - 1;
            let (fq, _, bounds) = intops::fake_quantize_weights(w, *p)?;
            let mask = ste_mask(w, &bounds, axis, Signedness::Signed)?;
            Ok(Some((fq, mask)))
        }
    }
}

/// Integer-domain matmul node: forward via `intops::quantized_matmul`,
/// backward through the fake-quantized operands with STE masks.
pub fn quantized_matmul_op<E: Scalar>(
    g: &mut Graph<E>,
    a: ValueId,
    w: ValueId,
    a_cfg: ActQuant<E>,
    w_cfg: WeightQuant,
) -> Result<ValueId, QuantError> {
    let out = intops::quantized_matmul(g.value(a), g.value(w), &a_cfg, &w_cfg)?;
    let a_side = mask_for(g.value(a), &a_cfg)?;
    let w_side = weight_fq_and_mask(g.value(w), &w_cfg)?;
    Ok(g.push_op(
        vec![a, w],
        out,
        Box::new(move |grad, parents| {
            let (a_fq, a_mask) = match &a_side {
                Some((fq, m)) => (fq, Some(m)),
                None => (parents[0], None),
            };
            let (w_fq, w_mask) = match &w_side {
                Some((fq, m)) => (fq, Some(m)),
                None => (parents[1], None),
            };
            let mut ga = linalg::matmul_nt(grad, w_fq).expect("matmul grad lhs");
            if let Some(m) = a_mask {
                ga = ga.zip_map(m, |x, b| x * b).expect("mask shape");
            }
            let mut gw = linalg::matmul_tn(a_fq, grad).expect("matmul grad rhs");
            if let Some(m) = w_mask {
                gw = gw.zip_map(m, |x, b| x * b).expect("mask shape");
            }
            vec![ga, gw]
        }),
    ))
}

/// Integer-domain convolution node; same contract as
/// [`quantized_matmul_op`] through the patch-extraction lowering.
pub fn quantized_conv2d_op<E: Scalar>(
    g: &mut Graph<E>,
    x: ValueId,
    kernel: ValueId,
    stride: usize,
    padding: Padding,
    a_cfg: ActQuant<E>,
    w_cfg: WeightQuant,
) -> Result<ValueId, QuantError> {
    let geo = ConvGeometry::resolve(g.value(x), g.value(kernel), stride, padding)?;
    let out = intops::quantized_conv2d(g.value(x), g.value(kernel), stride, padding, &a_cfg, &w_cfg)?;
    let x_side = mask_for(g.value(x), &a_cfg)?;
    let k_side = weight_fq_and_mask(g.value(kernel), &w_cfg)?;
    Ok(g.push_op(
        vec![x, kernel],
        out,
        Box::new(move |grad, parents| {
            let (x_fq, x_mask) = match &x_side {
                Some((fq, m)) => (fq, Some(m)),
                None => (parents[0], None),
            };
            let (k_fq, k_mask) = match &k_side {
                Some((fq, m)) => (fq, Some(m)),
                None => (parents[1], None),
            };
            let mut gx = conv::conv2d_grad_input(grad, k_fq, &geo).expect("conv grad input");
            if let Some(m) = x_mask {
                gx = gx.zip_map(m, |v, b| v * b).expect("mask shape");
            }
            let mut gk = conv::conv2d_grad_kernel(x_fq, grad, &geo).expect("conv grad kernel");
            if let Some(m) = k_mask {
                gk = gk.zip_map(m, |v, b| v * b).expect("mask shape");
            }
            vec![gx, gk]
        }),
    ))
}
