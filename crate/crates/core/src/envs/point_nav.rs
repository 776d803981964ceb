//! Planar point robot that drives to a sequence of random goals among
//! circular hazards.
//!
//! The robot is a unicycle: the first action component accelerates along
//! the heading, the second turns. Speed decays geometrically every step and
//! is capped; positions are clamped to the square arena. Every step spent
//! inside a hazard costs 1.

use std::f64::consts::SQRT_2;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_action, EnvStep, Environment};
use crate::error::{Error, Result};

/// Bumped whenever the dynamics constants below change.
pub const DYNAMICS_VERSION: u32 = 1;
pub const OBS_DIM: usize = 3 + 3 * NEAREST_HAZARDS + 1;

const NEAREST_HAZARDS: usize = 3;
const SPEED_DAMPING: f64 = 0.9;
const MAX_SPEED_FRACTION: f64 = 0.05;
const ACCEL_FRACTION: f64 = 0.01;
const MAX_TURN: f64 = 0.25;
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostWeightMode {
    /// Subtract `w·cost` from the reward.
    InReward(f64),
    /// Report the cost separately and leave the reward untouched.
    Separate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointNavConfig {
    pub arena_half_width: f64,
    pub hazard_count: usize,
    pub hazard_radius: f64,
    pub goal_radius: f64,
    pub max_steps: usize,
    pub dense_reward_scale: f64,
    pub goal_bonus: f64,
    pub cost_weight_mode: CostWeightMode,
}

impl Default for PointNavConfig {
    fn default() -> Self {
        Self {
            arena_half_width: 2.0,
            hazard_count: 8,
            hazard_radius: 0.25,
            goal_radius: 0.3,
            max_steps: 1000,
            dense_reward_scale: 1.0,
            goal_bonus: 1.0,
            cost_weight_mode: CostWeightMode::InReward(0.075),
        }
    }
}

impl PointNavConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.arena_half_width > 0.0) {
            return Err(Error::Config("arena_half_width must be > 0".into()));
        }
        if !(self.hazard_radius > 0.0 && self.goal_radius > 0.0) {
            return Err(Error::Config("hazard_radius and goal_radius must be > 0".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if !self.dense_reward_scale.is_finite() || !self.goal_bonus.is_finite() {
            return Err(Error::Config("reward scales must be finite".into()));
        }
        if let CostWeightMode::InReward(w) = self.cost_weight_mode {
            if !(w >= 0.0) {
                return Err(Error::Config("cost weight must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn max_speed(&self) -> f64 {
        MAX_SPEED_FRACTION * self.arena_half_width
    }

    pub fn acceleration(&self) -> f64 {
        ACCEL_FRACTION * self.arena_half_width
    }
}

#[derive(Debug, Clone)]
pub struct PointNav {
    config: PointNavConfig,
    rng: ChaCha8Rng,
    position: [f64; 2],
    heading: f64,
    speed: f64,
    goal: [f64; 2],
    hazards: Vec<[f64; 2]>,
    steps: usize,
    goals_reached: usize,
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl PointNav {
    pub fn new(config: PointNavConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            rng: ChaCha8Rng::seed_from_u64(0),
            position: [0.0; 2],
            heading: 0.0,
            speed: 0.0,
            goal: [0.0; 2],
            hazards: Vec::new(),
            steps: 0,
            goals_reached: 0,
        })
    }

    pub fn config(&self) -> &PointNavConfig {
        &self.config
    }

    pub fn position(&self) -> [f64; 2] {
        self.position
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    pub fn hazards(&self) -> &[[f64; 2]] {
        &self.hazards
    }

    pub fn goals_reached(&self) -> usize {
        self.goals_reached
    }

    pub fn goal_distance(&self) -> f64 {
        distance(self.position, self.goal)
    }

    pub fn in_hazard(&self) -> bool {
        self.hazards
            .iter()
            .any(|h| distance(*h, self.position) < self.config.hazard_radius)
    }

    fn uniform_point(&mut self) -> [f64; 2] {
        let hw = self.config.arena_half_width;
        [self.rng.random_range(-hw..=hw), self.rng.random_range(-hw..=hw)]
    }

    fn place_goal(&mut self, avoid_agent: bool) -> Result<()> {
        let clearance = self.config.goal_radius + self.config.hazard_radius;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let g = self.uniform_point();
            let clear_of_hazards = self.hazards.iter().all(|h| distance(*h, g) >= clearance);
            let clear_of_agent = !avoid_agent || distance(self.position, g) >= 2.0 * self.config.goal_radius;
            if clear_of_hazards && clear_of_agent {
                self.goal = g;
                return Ok(());
            }
        }
        Err(Error::Config(format!(
            "could not place goal after {PLACEMENT_ATTEMPTS} attempts; arena too crowded"
        )))
    }

    fn observation(&self) -> Vec<f64> {
        let scale = 2.0 * SQRT_2 * self.config.arena_half_width;
        let rel = |p: [f64; 2]| -> [f64; 3] {
            let dx = p[0] - self.position[0];
            let dy = p[1] - self.position[1];
            let bearing = dy.atan2(dx) - self.heading;
            [dx.hypot(dy) / scale, bearing.sin(), bearing.cos()]
        };
        let mut obs = Vec::with_capacity(OBS_DIM);
        obs.extend(rel(self.goal));
        let mut nearest: Vec<(f64, [f64; 2])> = self.hazards.iter().map(|h| (distance(*h, self.position), *h)).collect();
        nearest.sort_by(|a, b| a.0.total_cmp(&b.0));
        for k in 0..NEAREST_HAZARDS {
            match nearest.get(k) {
                Some((_, h)) => obs.extend(rel(*h)),
                None => obs.extend([0.0; 3]),
            }
        }
        obs.push(self.speed / self.config.max_speed());
        obs
    }
}

impl Environment for PointNav {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-1.0; 2], vec![1.0; 2])
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.position = [0.0; 2];
        self.heading = 0.0;
        self.speed = 0.0;
        self.steps = 0;
        self.goals_reached = 0;
        self.hazards.clear();
        self.goal = self.uniform_point();
        let clearance = self.config.goal_radius + self.config.hazard_radius;
        for _ in 0..self.config.hazard_count {
            let mut placed = false;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let h = self.uniform_point();
                if distance(h, self.goal) >= clearance {
                    self.hazards.push(h);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::Config(format!(
                    "could not place hazard after {PLACEMENT_ATTEMPTS} attempts; arena too crowded"
                )));
            }
        }
        Ok(self.observation())
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let (low, high) = self.action_bounds();
        check_action(action, &low, &high)?;
        let hw = self.config.arena_half_width;
        let max_speed = self.config.max_speed();
        let before = self.goal_distance();

        self.heading += MAX_TURN * action[1];
        self.speed = (SPEED_DAMPING * self.speed + self.config.acceleration() * action[0]).clamp(-max_speed, max_speed);
        self.position[0] = (self.position[0] + self.speed * self.heading.cos()).clamp(-hw, hw);
        self.position[1] = (self.position[1] + self.speed * self.heading.sin()).clamp(-hw, hw);
        self.steps += 1;

        let after = self.goal_distance();
        let mut reward = self.config.dense_reward_scale * (before - after);
        if after < self.config.goal_radius {
            reward += self.config.goal_bonus;
            self.goals_reached += 1;
            self.place_goal(true)?;
        }
        let cost = if self.in_hazard() { 1.0 } else { 0.0 };
        if let CostWeightMode::InReward(w) = self.config.cost_weight_mode {
            reward -= w * cost;
        }
        Ok(EnvStep {
            observation: self.observation(),
            reward,
            cost,
            terminated: false,
            truncated: self.steps >= self.config.max_steps,
        })
    }

    fn layout_snapshot(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "point_nav v{DYNAMICS_VERSION} step {}", self.steps);
        let _ = writeln!(
            s,
            "agent {:.4} {:.4} heading {:.4} speed {:.4}",
            self.position[0], self.position[1], self.heading, self.speed
        );
        let _ = writeln!(s, "goal {:.4} {:.4}", self.goal[0], self.goal[1]);
        for (i, h) in self.hazards.iter().enumerate() {
            let _ = writeln!(s, "hazard {i} {:.4} {:.4}", h[0], h[1]);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(hazards: usize) -> PointNav {
        PointNav::new(PointNavConfig {
            hazard_count: hazards,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn no_hazards_zero_features() {
        let mut e = env(0);
        let obs = e.reset(3).unwrap();
        assert_eq!(obs.len(), OBS_DIM);
        assert!(obs[3..12].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn same_seed_same_layout() {
        let mut a = env(8);
        let mut b = env(8);
        assert_eq!(a.reset(11).unwrap(), b.reset(11).unwrap());
        assert_eq!(a.layout_snapshot(), b.layout_snapshot());
        assert_eq!(a.hazards(), b.hazards());
    }

    #[test]
    fn zero_action_from_rest() {
        let mut e = env(0);
        e.reset(5).unwrap();
        let step = e.step(&[0.0, 0.0]).unwrap();
        assert_eq!(e.position(), [0.0, 0.0]);
        assert_eq!(step.reward, 0.0);
        assert_eq!(step.cost, 0.0);
        assert!(!step.terminated && !step.truncated);
    }

    #[test]
    fn hazard_step_costs_one() {
        let mut e = PointNav::new(PointNavConfig {
            hazard_count: 0,
            cost_weight_mode: CostWeightMode::InReward(0.5),
            ..Default::default()
        })
        .unwrap();
        e.reset(1).unwrap();
        e.hazards.push([0.0, 0.0]);
        e.goal = [1.5, 1.5];
        let step = e.step(&[0.0, 0.0]).unwrap();
        assert_eq!(step.cost, 1.0);
        assert_eq!(step.reward, -0.5);
    }

    #[test]
    fn truncates_at_max_steps() {
        let mut e = PointNav::new(PointNavConfig {
            max_steps: 3,
            hazard_count: 0,
            ..Default::default()
        })
        .unwrap();
        e.reset(0).unwrap();
        let flags: Vec<bool> = (0..3).map(|_| e.step(&[0.0, 0.0]).unwrap().truncated).collect();
        assert_eq!(flags, vec![false, false, true]);
    }

    #[test]
    fn out_of_bounds_action_rejected() {
        let mut e = env(0);
        e.reset(0).unwrap();
        assert!(e.step(&[1.5, 0.0]).is_err());
        assert!(e.step(&[0.0]).is_err());
    }

    #[test]
    fn crowded_arena_is_config_error() {
        let mut e = PointNav::new(PointNavConfig {
            arena_half_width: 0.1,
            hazard_count: 1,
            hazard_radius: 1.0,
            goal_radius: 1.0,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(e.reset(0), Err(Error::Config(_))));
    }
}
