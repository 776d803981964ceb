//! Generalized advantage estimation and batch normalization of advantages.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdvantageConfig {
    pub gamma: f64,
    pub lambda_gae: f64,
    pub normalize_advantages: bool,
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda_gae: 0.95,
            normalize_advantages: true,
        }
    }
}

impl AdvantageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda_gae) {
            return Err(Error::Config(format!("lambda_gae must lie in [0, 1], got {}", self.lambda_gae)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvantageRecord {
    pub advantage: f64,
    /// Discounted reward-to-go, bootstrapped with the terminal value.
    pub return_to_go: f64,
    /// `advantage + V(s_t)`
    pub value_target: f64,
}

/// GAE over one episode segment in a single backward pass.
///
/// `terminal_value` is `V(s_{T+1})` for a truncated segment and 0 when the
/// episode terminated.
pub fn gae(rewards: &[f64], values: &[f64], terminal_value: f64, config: &AdvantageConfig) -> Result<Vec<AdvantageRecord>> {
    if rewards.is_empty() {
        return Err(Error::Empty("reward sequence"));
    }
    ensure_len("values", rewards.len(), values.len())?;
    config.validate()?;
    if rewards.iter().chain(values).chain(std::iter::once(&terminal_value)).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gae inputs".into()));
    }
    let AdvantageConfig { gamma, lambda_gae, .. } = *config;
    let mut out = vec![
        AdvantageRecord {
            advantage: 0.0,
            return_to_go: 0.0,
            value_target: 0.0,
        };
        rewards.len()
    ];
    let mut next_value = terminal_value;
    let mut running_adv = 0.0;
    let mut running_ret = terminal_value;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        running_adv = delta + gamma * lambda_gae * running_adv;
        running_ret = rewards[t] + gamma * running_ret;
        out[t] = AdvantageRecord {
            advantage: running_adv,
            return_to_go: running_ret,
            value_target: running_adv + values[t],
        };
        next_value = values[t];
    }
    Ok(out)
}

/// Shifts and scales to zero mean and unit population standard deviation
/// (`1e-8` added to the denominator). A constant batch maps to all zeros.
pub fn normalize(advantages: &[f64]) -> Result<Vec<f64>> {
    if advantages.len() < 2 {
        return Err(Error::Domain(format!(
            "normalization needs at least 2 advantages, got {}",
            advantages.len()
        )));
    }
    if advantages.iter().all(|&a| a == advantages[0]) {
        return Ok(vec![0.0; advantages.len()]);
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + 1e-8;
    Ok(advantages.iter().map(|a| (a - mean) / denom).collect())
}
