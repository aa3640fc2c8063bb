use std::collections::HashMap;

use super::NamedTensor;
use crate::error::{Result, SeldError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with moments keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// Applies one update from the gradients currently stored on `params`.
    /// A parameter without a gradient is treated as having a zero gradient.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &[NamedTensor]) -> Result<()> {
        for p in params {
            if let Some(g) = p.var.grad_ref().as_ref() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(SeldError::Optimizer { param: p.name.clone() });
                }
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for p in params {
            let n = p.var.numel();
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            if m.len() != n {
                return Err(SeldError::shape("adam", format!("moment shape changed for `{}`", p.name)));
            }
            let grad = p.var.grad_ref();
            let mut value = p.var.value_mut();
            for i in 0..n {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Constant for the first 30 epochs, then 5% decay per epoch.
pub fn lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    if epoch < 30 {
        base_lr
    } else {
        base_lr * 0.95f64.powi((epoch - 29) as i32)
    }
}
