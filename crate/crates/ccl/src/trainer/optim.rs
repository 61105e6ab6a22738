//! Optimizers: SGD with momentum and weight decay for the segmentors
//! (polynomial learning-rate schedule), Adam with a constant rate for the
//! discriminators.

use serde::{Deserialize, Serialize};

use crate::nets::ParamVector;

pub const ADAM_EPS: f64 = 1e-8;

/// Polynomial schedule: base_lr * (1 - step/total)^power.
pub fn poly_lr(step: usize, total: usize, base_lr: f64, power: f64) -> f64 {
    debug_assert!(step <= total);
    base_lr * (1.0 - step as f64 / total as f64).powf(power)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub velocity: Vec<f64>,
}

impl SgdState {
    pub fn new(len: usize) -> Self {
        Self { velocity: vec![0.0; len] }
    }
}

/// g = grad + wd * theta; v = momentum * v + g; theta -= lr * v.
pub fn sgd_step(
    params: &mut ParamVector,
    grad: &[f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    state: &mut SgdState,
) {
    assert_eq!(params.len(), grad.len());
    assert_eq!(params.len(), state.velocity.len());
    let p = params.as_mut_slice();
    for i in 0..grad.len() {
        let g = grad[i] + weight_decay * p[i];
        let v = momentum * state.velocity[i] + g;
        state.velocity[i] = v;
        p[i] -= lr * v;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// Bias-corrected Adam:
/// m = b1 m + (1-b1) g; v = b2 v + (1-b2) g^2;
/// theta -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
pub fn adam_step(
    params: &mut ParamVector,
    grad: &[f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    state: &mut AdamState,
) {
    assert_eq!(params.len(), grad.len());
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let p = params.as_mut_slice();
    for i in 0..grad.len() {
        let g = grad[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        p[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn poly_lr_endpoints_and_midpoint() {
        assert_eq!(poly_lr(0, 1000, 2.5e-4, 0.9), 2.5e-4);
        assert_eq!(poly_lr(1000, 1000, 2.5e-4, 0.9), 0.0);
        // 2.5e-4 * 0.5^0.9
        assert_abs_diff_eq!(poly_lr(500, 1000, 2.5e-4, 0.9), 1.3397e-4, epsilon = 1e-8);
    }

    #[test]
    fn poly_lr_is_strictly_decreasing() {
        let mut prev = f64::INFINITY;
        for step in 0..=100 {
            let lr = poly_lr(step, 100, 1e-3, 0.9);
            assert!(lr < prev);
            prev = lr;
        }
    }

    // Hand-computed single steps at 1e-12.
    #[test]
    fn sgd_single_step_matches_hand_computation() {
        let mut p = ParamVector::from_vec(vec![1.0, -2.0]);
        let grad = [0.5, 0.25];
        let mut st = SgdState::new(2);
        sgd_step(&mut p, &grad, 0.1, 0.9, 0.01, &mut st);
        // g0 = 0.5 + 0.01*1 = 0.51; v0 = 0.51; p0 = 1 - 0.051 = 0.949
        // g1 = 0.25 - 0.02 = 0.23; v1 = 0.23; p1 = -2 + ... = -2 - 0.1*0.23 = -2.023
        assert_abs_diff_eq!(p.as_slice()[0], 0.949, epsilon = 1e-12);
        assert_abs_diff_eq!(p.as_slice()[1], -2.023, epsilon = 1e-12);

        sgd_step(&mut p, &grad, 0.1, 0.9, 0.01, &mut st);
        // g0 = 0.5 + 0.00949 = 0.50949; v0 = 0.9*0.51 + 0.50949 = 0.96849
        // p0 = 0.949 - 0.096849 = 0.852151
        assert_abs_diff_eq!(p.as_slice()[0], 0.852151, epsilon = 1e-12);
    }

    #[test]
    fn adam_single_step_matches_hand_computation() {
        let mut p = ParamVector::from_vec(vec![1.0]);
        let grad = [0.5];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &grad, 0.1, 0.9, 0.99, &mut st);
        // m = 0.05; v = 0.0025; mhat = 0.05/0.1 = 0.5; vhat = 0.0025/0.01 = 0.25
        // p = 1 - 0.1 * 0.5 / (0.5 + 1e-8)
        let want = 1.0 - 0.1 * 0.5 / (0.25f64.sqrt() + ADAM_EPS);
        assert_abs_diff_eq!(p.as_slice()[0], want, epsilon = 1e-12);
        assert_eq!(st.t, 1);
    }
}
