//! Lifecycle of activation clipping bounds.
//!
//! During warmup, per-channel max-abs statistics are tracked as exponential
//! moving averages; at the freeze step the bounds are fixed once for the
//! rest of training. Re-calibrating repeatedly risks feedback loops between
//! bounds and activations, so the transition is one-way by construction.
//! Weight bounds are different: they are recomputed from the current weight
//! tensor on every forward pass.

use nnkit::{Scalar, Tensor};

use crate::error::QuantError;

/// Per-channel EMA of observed max-abs values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaTracker<E: Scalar> {
    ema: Vec<E>,
    decay: E,
    observations: u64,
}

impl<E: Scalar> EmaTracker<E> {
    /// `decay` is the weight kept by the old average on each update.
    pub fn new(channels: usize, decay: E) -> Result<Self, QuantError> {
        if channels == 0 {
            return Err(QuantError::EmptyTensor);
        }
        if !(decay > E::zero() && decay < E::one()) {
            return Err(QuantError::InvalidDecay { got: decay.to_f64() });
        }
        Ok(EmaTracker {
            ema: vec![E::zero(); channels],
            decay,
            observations: 0,
        })
    }

    /// Observe a batch: per channel, `m = max(|x|)` over all non-channel
    /// axes. The first observation initializes the average directly;
    /// afterwards `ema <- decay*ema + (1-decay)*m`.
    pub fn update(&mut self, batch: &Tensor<E>, channel_axis: usize) -> Result<(), QuantError> {
        if batch.numel() == 0 {
            return Err(QuantError::EmptyTensor);
        }
        let shape = batch.shape();
        if channel_axis >= shape.len() {
            return Err(QuantError::BadChannelAxis {
                axis: channel_axis,
                shape: shape.to_vec(),
            });
        }
        if shape[channel_axis] != self.ema.len() {
            return Err(QuantError::ScaleChannelMismatch {
                expected: self.ema.len(),
                got: shape[channel_axis],
                axis: channel_axis,
            });
        }
        let stride = batch.stride_of(channel_axis);
        let dim = shape[channel_axis];
        let mut maxes = vec![E::zero(); dim];
        for (i, &v) in batch.data().iter().enumerate() {
            let c = nnkit::tensor::channel_of(i, stride, dim);
            let a = v.abs();
            if a > maxes[c] {
                maxes[c] = a;
            }
        }
        if self.observations == 0 {
            self.ema = maxes;
        } else {
            let keep = self.decay;
            let blend = E::one() - keep;
            for (e, m) in self.ema.iter_mut().zip(maxes) {
                *e = keep * *e + blend * m;
            }
        }
        self.observations += 1;
        Ok(())
    }

    pub fn values(&self) -> &[E] {
        &self.ema
    }

    pub fn observations(&self) -> u64 {
        self.observations
    }

    pub fn channels(&self) -> usize {
        self.ema.len()
    }
}

/// When to finalize calibration: at step `freeze_step` of `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalibrationSchedule {
    freeze_step: usize,
    total_steps: usize,
}

impl CalibrationSchedule {
    pub fn new(freeze_step: usize, total_steps: usize) -> Result<Self, QuantError> {
        if freeze_step == 0 || freeze_step >= total_steps {
            return Err(QuantError::InvalidSchedule {
                freeze: freeze_step,
                total: total_steps,
            });
        }
        Ok(CalibrationSchedule {
            freeze_step,
            total_steps,
        })
    }

    /// Freeze at `round(fraction * total_steps)`, clamped into `1..total`.
    /// The useful band is 10–40% of training; 20% is the default.
    pub fn from_fraction(fraction: f64, total_steps: usize) -> Result<Self, QuantError> {
        let n = (fraction * total_steps as f64).round() as usize;
        Self::new(n.clamp(1, total_steps.saturating_sub(1).max(1)), total_steps)
    }

    pub fn freeze_step(&self) -> usize {
        self.freeze_step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }
}

/// Bounds lifecycle: collecting statistics, or frozen for good.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundsState<E: Scalar> {
    Calibrating(EmaTracker<E>),
    Frozen(Vec<E>),
}

impl<E: Scalar> BoundsState<E> {
    pub fn new(channels: usize, decay: E) -> Result<Self, QuantError> {
        Ok(BoundsState::Calibrating(EmaTracker::new(channels, decay)?))
    }

    /// One-way transition at the freeze step: the current averages become
    /// the permanent bounds. Idempotent once frozen; before the freeze step
    /// the state is unchanged.
    pub fn maybe_freeze(&mut self, step: usize, schedule: &CalibrationSchedule) {
        if step >= schedule.freeze_step() {
            if let BoundsState::Calibrating(t) = self {
                *self = BoundsState::Frozen(t.values().to_vec());
            }
        }
    }

    /// True iff activations should be quantized (bounds are frozen).
    pub fn activations_quantized(&self) -> bool {
        matches!(self, BoundsState::Frozen(_))
    }

    pub fn frozen_bounds(&self) -> Option<&[E]> {
        match self {
            BoundsState::Frozen(b) => Some(b),
            BoundsState::Calibrating(_) => None,
        }
    }
}

/// Dynamic per-channel weight bounds: `max(|w|)` over all axes except the
/// output-channel axis. Recomputed on every forward pass.
pub fn weight_bounds<E: Scalar>(
    w: &Tensor<E>,
    out_channel_axis: usize,
) -> Result<Vec<E>, QuantError> {
    if w.numel() == 0 {
        return Err(QuantError::EmptyTensor);
    }
    let shape = w.shape();
    if out_channel_axis >= shape.len() {
        return Err(QuantError::BadChannelAxis {
            axis: out_channel_axis,
            shape: shape.to_vec(),
        });
    }
    let stride = w.stride_of(out_channel_axis);
    let dim = shape[out_channel_axis];
    let mut bounds = vec![E::zero(); dim];
    for (i, &v) in w.data().iter().enumerate() {
        let c = nnkit::tensor::channel_of(i, stride, dim);
        let a = v.abs();
        if a > bounds[c] {
            bounds[c] = a;
        }
    }
    Ok(bounds)
}
