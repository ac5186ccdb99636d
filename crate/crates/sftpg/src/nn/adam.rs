//! Adam with bias-corrected moment estimates.

use super::mlp::GradVector;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step_count: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state with the usual (0.9, 0.999, 1e-8) constants.
    pub fn new(dim: usize, lr: f64) -> Self {
        AdamState {
            step_count: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One descent step: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
///
/// Callers maximizing an objective negate the gradient first.
pub fn adam_step(params: &mut [f64], state: &mut AdamState, grad: &GradVector) -> Result<()> {
    if params.len() != state.m.len() || grad.len() != state.m.len() {
        return Err(Error::invalid_arg(format!(
            "adam dim mismatch: params {}, state {}, grad {}",
            params.len(),
            state.m.len(),
            grad.len()
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad.0[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}
