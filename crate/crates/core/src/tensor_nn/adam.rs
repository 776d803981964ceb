//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::params::ParameterVector;
use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_stability: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_stability: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(param_count: usize, config: AdamConfig) -> Self {
        Self {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step_count: 0,
            config,
        }
    }

    /// Applies one descent step in place. A non-finite gradient leaves both the
    /// parameters and the optimizer state untouched.
    pub fn step(&mut self, params: &mut ParameterVector, grad: &ParameterVector) -> Result<()> {
        ensure_len("adam parameters", self.first_moment.len(), params.len())?;
        ensure_len("adam gradient", params.len(), grad.len())?;
        if let Some(segment) = grad.first_non_finite() {
            return Err(Error::NonFiniteGradient {
                segment: segment.to_string(),
            });
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps_stability,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let p = params.values_mut();
        for (i, &g) in grad.values().iter().enumerate() {
            let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps_stability);
        }
        Ok(())
    }
}
