//! Bias-corrected Adam over a fixed-order parameter list.

use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    /// First and second moments, aligned with the parameter list.
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor], learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }
}

/// One Adam update from the gradients currently accumulated on `params`.
/// A non-finite gradient anywhere skips the whole step with a warning.
/// Gradients are cleared afterwards.
pub fn adam_step(params: &[Tensor], state: &mut AdamState) {
    let grads: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    for p in params {
        p.zero_grad();
    }
    adam_step_with_grads(params, &grads, state);
}

/// Adam update from explicitly supplied gradients (data-parallel sharding
/// averages shard gradients before calling this).
pub fn adam_step_with_grads(params: &[Tensor], grads: &[Vec<f64>], state: &mut AdamState) {
    assert_eq!(params.len(), state.m.len(), "adam_step: state/param count mismatch");
    assert_eq!(params.len(), grads.len(), "adam_step: grad count mismatch");
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        log::warn!("adam_step: non-finite gradient, skipping step");
        return;
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, p) in params.iter().enumerate() {
        let mut value = p.value();
        for (j, &g) in grads[i].iter().enumerate() {
            let m = &mut state.m[i][j];
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            let v = &mut state.v[i][j];
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            value[j] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
        p.set_value(value);
    }
}
