use serde::{Deserialize, Serialize};

use crate::advantage::AdvantageConfig;
use crate::constrained::ConstraintSpec;
use crate::envs::{CostWeightMode, EnvConfig};
use crate::error::{Error, Result};
use crate::objectives::ClipConfig;
use crate::policy::LogProbMode;
use crate::trpo::TrustRegionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ppo,
    Copg,
    Trpo,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::Copg => "copg",
            Algorithm::Trpo => "trpo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            policy_hidden: vec![64, 64],
            value_hidden: vec![64, 64],
            init_log_std: -0.5,
        }
    }
}

macro_rules! defaults {
    ($($name:ident: $ty:ty = $value:expr;)*) => {
        $(fn $name() -> $ty { $value })*
    };
}

defaults! {
    default_steps_per_batch: usize = 4000;
    default_epochs_per_batch: usize = 80;
    default_value_epochs: usize = 80;
    default_minibatch_count: usize = 1;
    default_policy_lr: f64 = 3e-4;
    default_value_lr: f64 = 1e-3;
    default_kl_stop_threshold: f64 = 0.015;
    default_entropy_log_samples: usize = 128;
    default_num_envs: usize = 1;
}

/// Everything a training run depends on. `algorithm` and `total_batches`
/// are required; every other field has a default.
///
/// With `algorithm = trpo` the fields `epochs_per_batch`, `minibatch_count`,
/// `clip`, `policy_lr` and `kl_stop_threshold` are unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub total_batches: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constrained: Option<ConstraintSpec>,
    #[serde(default = "default_steps_per_batch")]
    pub steps_per_batch: usize,
    #[serde(default = "default_num_envs")]
    pub num_envs: usize,
    #[serde(default = "default_epochs_per_batch")]
    pub epochs_per_batch: usize,
    #[serde(default = "default_value_epochs")]
    pub value_epochs: usize,
    #[serde(default = "default_minibatch_count")]
    pub minibatch_count: usize,
    #[serde(default = "default_policy_lr")]
    pub policy_lr: f64,
    #[serde(default = "default_value_lr")]
    pub value_lr: f64,
    #[serde(default = "default_kl_stop_threshold")]
    pub kl_stop_threshold: f64,
    #[serde(default = "default_entropy_log_samples")]
    pub entropy_log_samples: usize,
    #[serde(default)]
    pub log_prob_mode: LogProbMode,
    #[serde(default)]
    pub clip: ClipConfig,
    #[serde(default)]
    pub advantage: AdvantageConfig,
    #[serde(default)]
    pub trust_region: TrustRegionConfig,
    #[serde(default)]
    pub network: NetworkConfig,
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm, total_batches: usize) -> Self {
        Self {
            algorithm,
            total_batches,
            seed: 0,
            env: EnvConfig::default(),
            constrained: None,
            steps_per_batch: default_steps_per_batch(),
            num_envs: default_num_envs(),
            epochs_per_batch: default_epochs_per_batch(),
            value_epochs: default_value_epochs(),
            minibatch_count: default_minibatch_count(),
            policy_lr: default_policy_lr(),
            value_lr: default_value_lr(),
            kl_stop_threshold: default_kl_stop_threshold(),
            entropy_log_samples: default_entropy_log_samples(),
            log_prob_mode: LogProbMode::default(),
            clip: ClipConfig::default(),
            advantage: AdvantageConfig::default(),
            trust_region: TrustRegionConfig::default(),
            network: NetworkConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("steps_per_batch", self.steps_per_batch),
            ("num_envs", self.num_envs),
            ("epochs_per_batch", self.epochs_per_batch),
            ("minibatch_count", self.minibatch_count),
            ("entropy_log_samples", self.entropy_log_samples),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.num_envs > self.steps_per_batch {
            return Err(Error::Config("num_envs must not exceed steps_per_batch".into()));
        }
        if self.minibatch_count > self.steps_per_batch {
            return Err(Error::Config("minibatch_count must not exceed steps_per_batch".into()));
        }
        if !(self.policy_lr > 0.0) || !(self.value_lr > 0.0) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if !(self.kl_stop_threshold >= 0.0) {
            return Err(Error::Config("kl_stop_threshold must be >= 0".into()));
        }
        if self.network.policy_hidden.contains(&0) || self.network.value_hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !self.network.init_log_std.is_finite() {
            return Err(Error::Config("init_log_std must be finite".into()));
        }
        self.clip.validate()?;
        self.advantage.validate()?;
        self.trust_region.validate()?;
        self.env.validate()?;
        if let Some(spec) = &self.constrained {
            spec.validate()?;
            if let EnvConfig::PointNav(c) = &self.env {
                if c.cost_weight_mode != CostWeightMode::Separate {
                    return Err(Error::Config(
                        "constrained runs need env.cost_weight_mode = \"separate\"".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}
