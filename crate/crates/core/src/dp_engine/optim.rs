use super::gradient::FlatGradient;
use crate::error::{Error, Result};
use crate::models::ParamSet;
use crate::tensor::Scalar;

/// Momentum buffer for SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub velocity: Vec<T>,
    pub momentum: f64,
    /// Completed steps.
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(dim: usize, momentum: f64) -> Self {
        Self {
            velocity: vec![T::zero(); dim],
            momentum,
            step: 0,
        }
    }
}

/// `v ← μ·v + g`, `θ ← θ − lr·v`. With `μ = 0` this is plain SGD.
///
/// A gradient holding any non-finite coordinate aborts the step before
/// anything is modified.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grad: &FlatGradient<T>,
    lr: f64,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    let d = params.values.len();
    if grad.dim() != d || state.velocity.len() != d {
        return Err(Error::Dimension {
            op: "sgd_step",
            lhs: vec![d],
            rhs: vec![grad.dim(), state.velocity.len()],
        });
    }
    if let Some((index, value)) = grad.values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: state.step,
            layer: grad.layer_of(index),
            index,
            value: value.as_f64(),
        });
    }
    let mu = T::of(state.momentum);
    let lr = T::of(lr);
    for ((p, v), &g) in params.values.iter_mut().zip(&mut state.velocity).zip(&grad.values) {
        *v = mu * *v + g;
        *p = *p - lr * *v;
    }
    state.step += 1;
    Ok(())
}

/// Stepped learning-rate schedule with optional linear scaling by the
/// accumulation count.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub grad_acc: usize,
    pub scaling: bool,
    /// Epochs (0-based) at whose start the rate is multiplied by
    /// `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            base_lr: lr,
            grad_acc: 1,
            scaling: false,
            decay_epochs: Vec::new(),
            decay_factor: 1.0,
        }
    }

    pub fn initial_lr(&self) -> f64 {
        if self.scaling {
            self.base_lr * self.grad_acc as f64
        } else {
            self.base_lr
        }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        lr_schedule(
            epoch,
            self.base_lr,
            self.grad_acc,
            &self.decay_epochs,
            self.decay_factor,
            self.scaling,
        )
    }
}

pub fn lr_schedule(
    epoch: usize,
    base_lr: f64,
    grad_acc: usize,
    decay_epochs: &[usize],
    decay_factor: f64,
    scaling: bool,
) -> f64 {
    let init = if scaling { base_lr * grad_acc as f64 } else { base_lr };
    let decays = decay_epochs.iter().filter(|&&d| d <= epoch).count();
    init * decay_factor.powi(decays as i32)
}
