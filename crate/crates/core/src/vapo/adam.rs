use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    /// Fine-tune learning rate; phases carry their own rates.
    pub lr: f64,
    pub eps: f64,
    pub warmup_lr: f64,
    /// Use `lr / sqrt(t)` instead of a constant rate.
    pub step_decay: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            lr: 0.015,
            eps: 1e-8,
            warmup_lr: 0.03,
            step_decay: false,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(domain("Adam betas must lie in (0, 1)"));
        }
        if !(self.lr > 0.0 && self.eps > 0.0 && self.warmup_lr > 0.0) {
            return Err(domain("Adam learning rates and epsilon must be positive"));
        }
        Ok(())
    }
}

/// Per-latent moments and step counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub u: Vec<f64>,
    pub t: Vec<u64>,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            u: vec![0.0; n],
            t: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected Adam update of latent `i`; returns the new value.
pub fn adam_step(
    latent: f64,
    grad: f64,
    state: &mut AdamMoments,
    i: usize,
    config: &AdamConfig,
    lr: f64,
) -> f64 {
    state.t[i] += 1;
    let t = state.t[i] as f64;
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad;
    state.u[i] = config.beta2 * state.u[i] + (1.0 - config.beta2) * grad * grad;
    let m_hat = state.m[i] / (1.0 - libm::pow(config.beta1, t));
    let u_hat = state.u[i] / (1.0 - libm::pow(config.beta2, t));
    let lr = if config.step_decay {
        lr / libm::sqrt(t)
    } else {
        lr
    };
    latent - lr * m_hat / (libm::sqrt(u_hat) + config.eps)
}
