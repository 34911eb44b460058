//! SGD with momentum and the cosine learning-rate schedule.

use crate::error::NnError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A trainable tensor with its gradient slot and momentum buffer.
#[derive(Debug, Clone)]
pub struct Parameter<E: Scalar> {
    pub name: String,
    pub value: Tensor<E>,
    pub grad: Option<Tensor<E>>,
    pub momentum_buf: Tensor<E>,
}

impl<E: Scalar> Parameter<E> {
    pub fn new(name: impl Into<String>, value: Tensor<E>) -> Self {
        let momentum_buf = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad: None,
            momentum_buf,
        }
    }
}

/// Plain SGD with momentum: `v <- m*v + g`, `w <- w - lr*v`.
#[derive(Debug, Clone, Copy)]
pub struct SgdMomentum<E: Scalar> {
    pub momentum: E,
}

impl<E: Scalar> SgdMomentum<E> {
    pub fn new(momentum: E) -> Self {
        SgdMomentum { momentum }
    }

    /// Applies one update to every parameter, consuming the stored gradients.
    pub fn step(&self, params: &mut [Parameter<E>], lr: E) -> Result<(), NnError> {
        if lr <= E::zero() {
            return Err(NnError::NonPositive {
                what: "learning rate",
                got: lr.to_f64(),
            });
        }
        for p in params.iter_mut() {
            let grad = p.grad.take().ok_or_else(|| NnError::Checkpoint(format!(
                "parameter {} has no gradient; run backward before stepping",
                p.name
            )))?;
            let m = self.momentum;
            // v <- m*v + g
            for (v, &g) in p.momentum_buf.data_mut().iter_mut().zip(grad.data()) {
                *v = m * *v + g;
            }
            // w <- w - lr*v
            for (w, &v) in p.value.data_mut().iter_mut().zip(p.momentum_buf.data()) {
                *w = *w - lr * v;
            }
        }
        Ok(())
    }
}

/// Cosine-decay learning rate with linear warmup.
///
/// Steps `0..warmup_steps` ramp linearly from `base/warmup_steps` to `base`;
/// the remainder decays with a half cosine to zero at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64, warmup_steps: usize) -> f64 {
    if warmup_steps > 0 && step < warmup_steps {
        return base_lr * (step + 1) as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps).max(1);
    let progress = (step - warmup_steps) as f64 / span as f64;
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
}
