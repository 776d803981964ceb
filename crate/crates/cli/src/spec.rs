//! Experiment spec files: a training config plus run name, output
//! directory and seed list, in TOML. Unknown keys are rejected.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use copg::envs::DYNAMICS_VERSION;
use copg::tensor_nn::FORMAT_VERSION;
use copg::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Empty means `[train.seed]`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

impl ExperimentSpec {
    /// Applies a `--seed` override and expands the default seed list.
    pub fn resolve(mut self, seed_override: Option<u64>, out_override: Option<PathBuf>) -> Result<Self, CliError> {
        if let Some(seed) = seed_override {
            self.seeds = vec![seed];
        }
        if self.seeds.is_empty() {
            self.seeds = vec![self.train.seed];
        }
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return Err(CliError::Config("seeds must be unique".into()));
        }
        if let Some(out) = out_override {
            self.out_dir = Some(out);
        }
        self.train.validate()?;
        Ok(self)
    }

    /// The training config for one seed of the sweep.
    pub fn config_for_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    /// The fully resolved spec as TOML, preceded by version comments.
    pub fn manifest(&self) -> Result<String, CliError> {
        let body = toml::to_string(self).map_err(|e| CliError::Runtime(format!("manifest serialization: {e}")))?;
        Ok(format!(
            "# copg-cli {}\n# checkpoint format {FORMAT_VERSION}\n# point_nav dynamics {DYNAMICS_VERSION}\n{body}",
            env!("CARGO_PKG_VERSION")
        ))
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses spec text. Errors name the offending field path and, when known,
/// the line.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec, CliError> {
    let de = toml::Deserializer::parse(text).map_err(|e| {
        let line = e.span().map(|s| format!("line {}: ", line_of(text, s.start))).unwrap_or_default();
        CliError::Config(format!("{line}{}", e.message()))
    })?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.inner();
        let line = inner.span().map(|s| format!("line {}: ", line_of(text, s.start))).unwrap_or_default();
        CliError::Config(format!("{line}`{path}`: {}", inner.message()))
    })
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_spec(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
