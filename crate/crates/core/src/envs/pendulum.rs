//! Torque-limited pendulum swing-up. The angle is measured from upright.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_action, EnvStep, Environment};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumConfig {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub max_torque: f64,
    pub damping: f64,
    pub max_steps: usize,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_speed: 8.0,
            max_torque: 2.0,
            damping: 0.0,
            max_steps: 200,
        }
    }
}

impl PendulumConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.gravity, self.mass, self.length, self.dt, self.max_speed, self.max_torque];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("pendulum physical constants must be > 0".into()));
        }
        if !(self.damping >= 0.0) {
            return Err(Error::Config("pendulum damping must be >= 0".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Pendulum {
    config: PendulumConfig,
    theta: f64,
    theta_dot: f64,
    steps: usize,
}

/// Wraps an angle into `[-π, π)`.
pub fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn new(config: PendulumConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            theta: 0.0,
            theta_dot: 0.0,
            steps: 0,
        })
    }

    pub fn config(&self) -> &PendulumConfig {
        &self.config
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
    }

    /// Mechanical energy of a uniform rod pivoting at one end, zero potential
    /// at horizontal.
    pub fn energy(&self) -> f64 {
        let PendulumConfig { mass: m, length: l, gravity: g, .. } = self.config;
        m * l * l / 6.0 * self.theta_dot * self.theta_dot + m * g * l / 2.0 * self.theta.cos()
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Environment for Pendulum {
    fn obs_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-self.config.max_torque], vec![self.config.max_torque])
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.theta = rng.random_range(-PI..PI);
        self.theta_dot = rng.random_range(-1.0..1.0);
        self.steps = 0;
        Ok(self.observation())
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let (low, high) = self.action_bounds();
        check_action(action, &low, &high)?;
        let PendulumConfig {
            gravity: g,
            mass: m,
            length: l,
            dt,
            max_speed,
            damping,
            ..
        } = self.config;
        let u = action[0];
        let th = angle_normalize(self.theta);
        let reward = -(th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);
        let accel = 3.0 * g / (2.0 * l) * self.theta.sin() + 3.0 / (m * l * l) * u - damping * self.theta_dot;
        self.theta_dot = (self.theta_dot + accel * dt).clamp(-max_speed, max_speed);
        self.theta += self.theta_dot * dt;
        self.steps += 1;
        Ok(EnvStep {
            observation: self.observation(),
            reward,
            cost: 0.0,
            terminated: false,
            truncated: self.steps >= self.config.max_steps,
        })
    }

    fn layout_snapshot(&self) -> String {
        format!(
            "pendulum step {} theta {:.6} theta_dot {:.6}\n",
            self.steps, self.theta, self.theta_dot
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upright_at_rest_zero_reward() {
        let mut p = Pendulum::new(PendulumConfig::default()).unwrap();
        p.set_state(0.0, 0.0);
        let s = p.step(&[0.0]).unwrap();
        assert_eq!(s.reward, 0.0);
        assert_eq!(s.observation, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn energy_conserved_small_dt() {
        let mut p = Pendulum::new(PendulumConfig {
            dt: 1e-4,
            max_steps: usize::MAX,
            ..Default::default()
        })
        .unwrap();
        p.set_state(2.0, 0.5);
        let mut e0 = p.energy();
        for _ in 0..5000 {
            p.step(&[0.0]).unwrap();
            let e1 = p.energy();
            assert!((e1 - e0).abs() < 1e-6, "{e0} -> {e1}");
            e0 = e1;
        }
    }

    #[test]
    fn angle_wrap() {
        assert!((angle_normalize(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(angle_normalize(0.25), 0.25);
    }

    #[test]
    fn truncation_at_200() {
        let mut p = Pendulum::new(PendulumConfig::default()).unwrap();
        p.reset(9).unwrap();
        for i in 1..=200 {
            let s = p.step(&[0.0]).unwrap();
            assert_eq!(s.truncated, i == 200);
        }
    }
}
