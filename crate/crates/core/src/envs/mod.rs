//! Native continuous-control environments behind a common interface.

mod pendulum;
mod point_nav;

pub use pendulum::{angle_normalize, Pendulum, PendulumConfig};
pub use point_nav::{CostWeightMode, PointNav, PointNavConfig, DYNAMICS_VERSION, OBS_DIM as POINT_NAV_OBS_DIM};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub terminated: bool,
    pub truncated: bool,
}

pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Per-dimension `(low, high)` action bounds.
    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>);
    /// Starts a new episode; the episode is a pure function of `seed` and the
    /// subsequent actions.
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>>;
    /// Advances one step. Actions must already lie within the bounds.
    fn step(&mut self, action: &[f64]) -> Result<EnvStep>;
    /// Human-readable dump of the current episode state.
    fn layout_snapshot(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    PointNav(PointNavConfig),
    Pendulum(PendulumConfig),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::PointNav(PointNavConfig::default())
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::PointNav(c) => c.validate(),
            EnvConfig::Pendulum(c) => c.validate(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        self.validate()?;
        Ok(match self {
            EnvConfig::PointNav(c) => Box::new(PointNav::new(c.clone())?),
            EnvConfig::Pendulum(c) => Box::new(Pendulum::new(c.clone())?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::PointNav(_) => "point_nav",
            EnvConfig::Pendulum(_) => "pendulum",
        }
    }
}

pub(crate) fn check_action(action: &[f64], low: &[f64], high: &[f64]) -> Result<()> {
    crate::error::ensure_len("action", low.len(), action.len())?;
    for (i, a) in action.iter().enumerate() {
        if !a.is_finite() || *a < low[i] || *a > high[i] {
            return Err(Error::Domain(format!(
                "action[{i}] = {a} outside [{}, {}]",
                low[i], high[i]
            )));
        }
    }
    Ok(())
}
