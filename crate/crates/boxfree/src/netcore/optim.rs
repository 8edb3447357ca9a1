//! Adam optimizer state and update step.

use crate::error::{Error, Result};

/// Per-parameter first/second moment accumulators with bias correction.
#[derive(Debug, Clone)]
pub struct OptimState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        OptimState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Deterministic; rejects non-finite
/// gradients with a diagnostic naming the first offending index.
pub fn adam_step(state: &mut OptimState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "optimizer state holds {} parameters, got params={} grads={}",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    if let Some((i, g)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(Error::Optimizer(format!(
            "non-finite gradient {g} at parameter {i} (step {})",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_descends_quadratic() {
        // f(p) = p^2 at p=1, grad = 2p.
        let mut state = OptimState::new(1, 0.0002);
        let mut p = [1.0];
        adam_step(&mut state, &mut p, &[2.0]).unwrap();
        assert!(p[0] < 1.0, "parameter should decrease, got {}", p[0]);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = OptimState::new(3, 0.01);
        let mut p = [0.5, -0.25, 2.0];
        adam_step(&mut state, &mut p, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p, [0.5, -0.25, 2.0]);
    }

    #[test]
    fn converges_on_2d_quadratic() {
        // f(p) = (p0-1.5)^2 + 4*(p1+0.5)^2, minimum at (1.5, -0.5). The
        // optimizer run itself is the oracle against the known minimum.
        let mut state = OptimState::new(2, 0.05);
        let mut p = [0.0, 0.0];
        for _ in 0..2000 {
            let grads = [2.0 * (p[0] - 1.5), 8.0 * (p[1] + 0.5)];
            adam_step(&mut state, &mut p, &grads).unwrap();
        }
        let dist = ((p[0] - 1.5).powi(2) + (p[1] + 0.5).powi(2)).sqrt();
        assert!(dist < 1e-2, "distance to optimum {dist}");
        assert_eq!(state.step_count(), 2000);
    }

    #[test]
    fn non_finite_gradient_is_rejected_with_diagnostics() {
        let mut state = OptimState::new(2, 0.01);
        let mut p = [0.0, 0.0];
        let err = adam_step(&mut state, &mut p, &[0.0, f64::NAN]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("parameter 1"), "diagnostic should name the index: {msg}");
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut state = OptimState::new(2, 0.003);
            let mut p = [1.0, -1.0];
            for i in 0..50 {
                let g = [p[0] * 2.0 + i as f64 * 0.01, p[1] * 2.0];
                adam_step(&mut state, &mut p, &g).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
