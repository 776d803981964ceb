//! Reward-constrained policy optimization: costs are folded into the reward
//! through a Lagrange multiplier that is learned by projected dual ascent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    /// Target `d` for the mean undiscounted episodic cost.
    pub cost_limit: f64,
    #[serde(default = "default_multiplier_lr")]
    pub multiplier_lr: f64,
    #[serde(default)]
    pub multiplier_init: f64,
}

fn default_multiplier_lr() -> f64 {
    0.05
}

impl ConstraintSpec {
    pub fn new(cost_limit: f64) -> Self {
        Self {
            cost_limit,
            multiplier_lr: default_multiplier_lr(),
            multiplier_init: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cost_limit >= 0.0) {
            return Err(Error::Config("constrained.cost_limit must be >= 0".into()));
        }
        if !(self.multiplier_lr > 0.0) {
            return Err(Error::Config("constrained.multiplier_lr must be > 0".into()));
        }
        if !(self.multiplier_init >= 0.0) {
            return Err(Error::Config("constrained.multiplier_init must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagrangeState {
    pub lambda: f64,
    pub last_episodic_cost: f64,
}

impl LagrangeState {
    pub fn new(spec: &ConstraintSpec) -> Self {
        Self {
            lambda: spec.multiplier_init,
            last_episodic_cost: 0.0,
        }
    }
}

/// `r - λ·c`
pub fn shaped_reward(reward: f64, cost: f64, state: &LagrangeState) -> f64 {
    reward - state.lambda * cost
}

/// `λ ← max(0, λ + lr·(cost - d))`
pub fn multiplier_update(state: &LagrangeState, mean_episodic_cost: f64, spec: &ConstraintSpec) -> Result<LagrangeState> {
    if !mean_episodic_cost.is_finite() {
        return Err(Error::NonFinite("mean episodic cost".into()));
    }
    let lambda = (state.lambda + spec.multiplier_lr * (mean_episodic_cost - spec.cost_limit)).max(0.0);
    Ok(LagrangeState {
        lambda,
        last_episodic_cost: mean_episodic_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(lambda: f64) -> LagrangeState {
        LagrangeState {
            lambda,
            last_episodic_cost: 0.0,
        }
    }

    #[test]
    fn shaping() {
        assert_eq!(shaped_reward(0.7, 3.0, &at(0.0)), 0.7);
        assert_eq!(shaped_reward(1.0, 2.0, &at(0.5)), 0.0);
    }

    #[test]
    fn multiplier_cases() {
        let spec = ConstraintSpec {
            cost_limit: 4.0,
            multiplier_lr: 0.05,
            multiplier_init: 0.0,
        };
        assert_eq!(multiplier_update(&at(0.3), 4.0, &spec).unwrap().lambda, 0.3);
        assert_eq!(multiplier_update(&at(0.0), 1.0, &spec).unwrap().lambda, 0.0);
        let next = multiplier_update(&at(1.0), 6.0, &spec).unwrap();
        assert!((next.lambda - 1.1).abs() < 1e-15);
        assert_eq!(next.last_episodic_cost, 6.0);
        assert!(multiplier_update(&at(1.0), f64::NAN, &spec).is_err());
    }
}
