//! Adam optimizer with bias-corrected moment estimates.

use std::collections::BTreeMap;

use super::{NumericsError, ParamSet, Tensor};

/// Per-parameter first/second moment buffers plus the shared step counter.
/// Moments are created lazily the first time a parameter is stepped.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(lr: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// Applies one Adam update from the accumulated gradients in `params`,
/// then clears them. Parameters with all-zero gradients and fresh moments
/// come out bitwise unchanged.
pub fn adam_step(state: &mut AdamState, params: &mut ParamSet) -> Result<(), NumericsError> {
    state.step += 1;
    let bias1 = 1.0 - state.beta1.powi(state.step as i32);
    let bias2 = 1.0 - state.beta2.powi(state.step as i32);
    let (lr, beta1, beta2, eps) = (state.lr, state.beta1, state.beta2, state.eps);

    let mut bad: Option<String> = None;
    let moments = &mut state.moments;
    params.for_each_mut(|name, value, grad| {
        if bad.is_some() {
            return;
        }
        if !grad.is_finite() {
            bad = Some(name.to_string());
            return;
        }
        let (m, v) = moments
            .entry(name.to_string())
            .or_insert_with(|| (Tensor::zeros(value.shape()), Tensor::zeros(value.shape())));
        for i in 0..value.len() {
            let g = grad.data()[i];
            let mi = beta1 * m.data()[i] + (1.0 - beta1) * g;
            let vi = beta2 * v.data()[i] + (1.0 - beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let update = lr * (mi / bias1) / ((vi / bias2).sqrt() + eps);
            value.data_mut()[i] -= update;
        }
        grad.fill(0.0);
    });
    match bad {
        Some(param) => Err(NumericsError::NonFiniteGradient { param }),
        None => Ok(()),
    }
}
