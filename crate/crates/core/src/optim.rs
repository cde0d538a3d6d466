//! Adam with bias correction and coupled (L2-in-gradient) weight decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[allow(unused_imports)]
use crate::float::FloatExt;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 5e-4,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 > 0.0 && self.beta1 < self.beta2 && self.beta2 < 1.0) {
            return Err(Error::Config(alloc::format!(
                "require 0 < beta1 < beta2 < 1, got {} and {}",
                self.beta1,
                self.beta2
            )));
        }
        Ok(())
    }
}

/// First/second moment estimates and step counter for one parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One Adam update in place. Weight decay is added to the gradient before
/// the moment updates (classic coupled L2).
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimMismatch {
            op: "adam_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len()],
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i] + cfg.weight_decay * params[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        // g = 0.5, lr = 1e-2, wd = 0: update = -lr * g / (|g| + eps)
        let cfg = AdamConfig {
            learning_rate: 1e-2,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = [1.0];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[0.5], &mut st, &cfg).unwrap();
        let expected = 1.0 - 1e-2 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = [0.7, -1.3];
        let mut st = AdamState::new(2);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0, 0.0], &mut st, &cfg).unwrap();
        }
        assert_eq!(p, [0.7, -1.3]);
    }

    #[test]
    fn trajectories_are_deterministic() {
        let cfg = AdamConfig::default();
        let run = || {
            let mut p = [0.3, -0.6, 1.1];
            let mut st = AdamState::new(3);
            for k in 0..20 {
                let g = [0.1 * k as f64, -0.2, 0.05];
                adam_step(&mut p, &g, &mut st, &cfg).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn invalid_betas_rejected() {
        let cfg = AdamConfig {
            beta1: 0.999,
            beta2: 0.9,
            ..AdamConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
