//! NHWC convolution and pooling kernels.
//!
//! Convolution is lowered to a matrix product by explicit patch extraction
//! (`im2col`): the input is unrolled into a `(N·Ho·Wo) × (Kh·Kw·Cin)` patch
//! matrix and multiplied against the kernel viewed as `(Kh·Kw·Cin) × Cout`.
//! The same lowering is what lets integer-domain quantized convolution share
//! the quantized matmul kernel.

use crate::error::NnError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{linalg, tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output spatial size `ceil(in / stride)`; zero padding split evenly
    /// with the extra row/column at the bottom/right.
    Same,
    /// No padding; output `floor((in - k) / stride) + 1`.
    Valid,
}

/// Output spatial extent for one dimension.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => input.div_ceil(stride),
        Padding::Valid => (input - kernel) / stride + 1,
    }
}

fn pad_before(input: usize, out: usize, kernel: usize, stride: usize, padding: Padding) -> isize {
    match padding {
        Padding::Valid => 0,
        Padding::Same => {
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            (total / 2) as isize
        }
    }
}

fn check_nhwc<E: Scalar>(
    op: &'static str,
    x: &Tensor<E>,
) -> Result<(usize, usize, usize, usize), NnError> {
    match x.shape() {
        [n, h, w, c] => Ok((*n, *h, *w, *c)),
        other => Err(NnError::RankMismatch {
            op,
            expected: 4,
            got: other.to_vec(),
        }),
    }
}

/// Dimensions shared by `im2col`, the forward pass and the two gradients.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub c_in: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub c_out: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pad_top: isize,
    pad_left: isize,
}

impl ConvGeometry {
    pub fn resolve<E: Scalar>(
        x: &Tensor<E>,
        kernel: &Tensor<E>,
        stride: usize,
        padding: Padding,
    ) -> Result<Self, NnError> {
        let (batch, in_h, in_w, c_in) = check_nhwc("conv2d", x)?;
        let (k_h, k_w, kc_in, c_out) = match kernel.shape() {
            [kh, kw, ci, co] => (*kh, *kw, *ci, *co),
            other => {
                return Err(NnError::RankMismatch {
                    op: "conv2d kernel",
                    expected: 4,
                    got: other.to_vec(),
                })
            }
        };
        if kc_in != c_in {
            return Err(NnError::ShapeMismatch {
                op: "conv2d",
                expected: format!("kernel c_in {c_in}"),
                got: format!("{kc_in}"),
            });
        }
        if stride == 0 {
            return Err(NnError::NonPositive {
                what: "stride",
                got: 0.0,
            });
        }
        if padding == Padding::Valid && (k_h > in_h || k_w > in_w) {
            return Err(NnError::ShapeMismatch {
                op: "conv2d",
                expected: format!("kernel {k_h}x{k_w} to fit input {in_h}x{in_w} (valid padding)"),
                got: "kernel larger than input".into(),
            });
        }
        let out_h = conv_output_dim(in_h, k_h, stride, padding);
        let out_w = conv_output_dim(in_w, k_w, stride, padding);
        Ok(ConvGeometry {
            batch,
            in_h,
            in_w,
            c_in,
            k_h,
            k_w,
            c_out,
            stride,
            out_h,
            out_w,
            pad_top: pad_before(in_h, out_h, k_h, stride, padding),
            pad_left: pad_before(in_w, out_w, k_w, stride, padding),
        })
    }

    pub fn patch_len(&self) -> usize {
        self.k_h * self.k_w * self.c_in
    }

    pub fn patch_rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }
}

/// Unroll NHWC input into the `(N·Ho·Wo) × (Kh·Kw·Cin)` patch matrix.
/// Out-of-bounds taps read as zero.
pub fn im2col<E: Scalar>(x: &Tensor<E>, geo: &ConvGeometry) -> Tensor<E> {
    let mut out = vec![E::zero(); geo.patch_rows() * geo.patch_len()];
    let xd = x.data();
    let row_stride = geo.in_w * geo.c_in;
    let img_stride = geo.in_h * row_stride;
    let mut dst = 0usize;
    for n in 0..geo.batch {
        for oh in 0..geo.out_h {
            let ih0 = (oh * geo.stride) as isize - geo.pad_top;
            for ow in 0..geo.out_w {
                let iw0 = (ow * geo.stride) as isize - geo.pad_left;
                for kh in 0..geo.k_h {
                    let ih = ih0 + kh as isize;
                    if ih < 0 || ih >= geo.in_h as isize {
                        dst += geo.k_w * geo.c_in;
                        continue;
                    }
                    let base = n * img_stride + ih as usize * row_stride;
                    for kw in 0..geo.k_w {
                        let iw = iw0 + kw as isize;
                        if iw < 0 || iw >= geo.in_w as isize {
                            dst += geo.c_in;
                            continue;
                        }
                        let src = base + iw as usize * geo.c_in;
                        out[dst..dst + geo.c_in].copy_from_slice(&xd[src..src + geo.c_in]);
                        dst += geo.c_in;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[geo.patch_rows(), geo.patch_len()], out).expect("im2col shape")
}

/// Scatter-add a patch-matrix gradient back onto the input layout; the
/// adjoint of [`im2col`].
pub fn col2im<E: Scalar>(patches: &Tensor<E>, geo: &ConvGeometry) -> Tensor<E> {
    let mut out = vec![E::zero(); geo.batch * geo.in_h * geo.in_w * geo.c_in];
    let pd = patches.data();
    let row_stride = geo.in_w * geo.c_in;
    let img_stride = geo.in_h * row_stride;
    let mut src = 0usize;
    for n in 0..geo.batch {
        for oh in 0..geo.out_h {
            let ih0 = (oh * geo.stride) as isize - geo.pad_top;
            for ow in 0..geo.out_w {
                let iw0 = (ow * geo.stride) as isize - geo.pad_left;
                for kh in 0..geo.k_h {
                    let ih = ih0 + kh as isize;
                    if ih < 0 || ih >= geo.in_h as isize {
                        src += geo.k_w * geo.c_in;
                        continue;
                    }
                    let base = n * img_stride + ih as usize * row_stride;
                    for kw in 0..geo.k_w {
                        let iw = iw0 + kw as isize;
                        if iw < 0 || iw >= geo.in_w as isize {
                            src += geo.c_in;
                            continue;
                        }
                        let dst = base + iw as usize * geo.c_in;
                        for c in 0..geo.c_in {
                            out[dst + c] += pd[src + c];
                        }
                        src += geo.c_in;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[geo.batch, geo.in_h, geo.in_w, geo.c_in], out).expect("col2im shape")
}

/// Forward convolution. Kernel layout is HWIO: `[Kh, Kw, Cin, Cout]`.
pub fn conv2d<E: Scalar>(
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<E>, NnError> {
    let geo = ConvGeometry::resolve(x, kernel, stride, padding)?;
    let patches = im2col(x, &geo);
    let k2d = kernel
        .clone()
        .reshape(&[geo.patch_len(), geo.c_out])
        .expect("HWIO kernel flattens to patch_len x c_out");
    let out = linalg::matmul(&patches, &k2d)?;
    out.reshape(&[geo.batch, geo.out_h, geo.out_w, geo.c_out])
}

/// Gradient of `conv2d` with respect to the input.
pub fn conv2d_grad_input<E: Scalar>(
    grad_out: &Tensor<E>,
    kernel: &Tensor<E>,
    geo: &ConvGeometry,
) -> Result<Tensor<E>, NnError> {
    let g2d = grad_out
        .clone()
        .reshape(&[geo.patch_rows(), geo.c_out])
        .expect("grad reshapes to rows x c_out");
    let k2d = kernel
        .clone()
        .reshape(&[geo.patch_len(), geo.c_out])
        .expect("kernel reshape");
    let grad_patches = linalg::matmul_nt(&g2d, &k2d)?;
    Ok(col2im(&grad_patches, geo))
}

/// Gradient of `conv2d` with respect to the kernel.
pub fn conv2d_grad_kernel<E: Scalar>(
    x: &Tensor<E>,
    grad_out: &Tensor<E>,
    geo: &ConvGeometry,
) -> Result<Tensor<E>, NnError> {
    let patches = im2col(x, geo);
    let g2d = grad_out
        .clone()
        .reshape(&[geo.patch_rows(), geo.c_out])
        .expect("grad reshape");
    let gk = linalg::matmul_tn(&patches, &g2d)?;
    gk.reshape(&[geo.k_h, geo.k_w, geo.c_in, geo.c_out])
}

/// Max pooling over NHWC. Returns the pooled tensor and, per output element,
/// the flat input index that supplied the maximum (ties resolve to the first
/// candidate in scan order, padding taps never win).
pub fn max_pool<E: Scalar>(
    x: &Tensor<E>,
    window: usize,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<E>, Vec<u32>), NnError> {
    let (batch, in_h, in_w, c) = check_nhwc("max_pool", x)?;
    if window == 0 || stride == 0 {
        return Err(NnError::NonPositive {
            what: "pool window/stride",
            got: 0.0,
        });
    }
    let out_h = conv_output_dim(in_h, window, stride, padding);
    let out_w = conv_output_dim(in_w, window, stride, padding);
    let pad_top = pad_before(in_h, out_h, window, stride, padding);
    let pad_left = pad_before(in_w, out_w, window, stride, padding);

    let xd = x.data();
    let row_stride = in_w * c;
    let img_stride = in_h * row_stride;
    let mut out = vec![E::zero(); batch * out_h * out_w * c];
    let mut argmax = vec![0u32; out.len()];
    let mut dst = 0usize;
    for n in 0..batch {
        for oh in 0..out_h {
            let ih0 = (oh * stride) as isize - pad_top;
            for ow in 0..out_w {
                let iw0 = (ow * stride) as isize - pad_left;
                for ch in 0..c {
                    let mut best = E::neg_infinity();
                    let mut best_idx = u32::MAX;
                    for kh in 0..window {
                        let ih = ih0 + kh as isize;
                        if ih < 0 || ih >= in_h as isize {
                            continue;
                        }
                        for kw in 0..window {
                            let iw = iw0 + kw as isize;
                            if iw < 0 || iw >= in_w as isize {
                                continue;
                            }
                            let idx = n * img_stride
                                + ih as usize * row_stride
                                + iw as usize * c
                                + ch;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx as u32;
                            }
                        }
                    }
                    out[dst] = best;
                    argmax[dst] = best_idx;
                    dst += 1;
                }
            }
        }
    }
    let pooled = Tensor::from_vec(&[batch, out_h, out_w, c], out)?;
    Ok((pooled, argmax))
}

/// Mean over the spatial axes: NHWC -> `[N, C]`.
pub fn global_avg_pool<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>, NnError> {
    let (batch, in_h, in_w, c) = check_nhwc("global_avg_pool", x)?;
    let hw = E::from_f64((in_h * in_w) as f64);
    let xd = x.data();
    let mut out = vec![E::zero(); batch * c];
    for n in 0..batch {
        let img = &xd[n * in_h * in_w * c..(n + 1) * in_h * in_w * c];
        for (i, &v) in img.iter().enumerate() {
            out[n * c + tensor::channel_of(i, 1, c)] += v;
        }
    }
    for v in &mut out {
        *v /= hw;
    }
    Tensor::from_vec(&[batch, c], out)
}
