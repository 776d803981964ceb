//! Experiment runner for the `copg` library: seed sweeps, cross-seed
//! comparisons, the gradient-ratio diagnostic and greedy evaluation.

pub mod compare;
pub mod spec;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use copg::envs::EnvConfig;
use copg::objectives::{high_side_fractions, BranchLabel, GradientRatio};
use copg::policy::GaussianPolicy;
use copg::tensor_nn::Checkpoint;
use copg::trainer::{greedy_eval, train, write_metrics_csv, Trainer, POLICY_PREFIX};
use thiserror::Error;

pub use spec::{load_spec, parse_spec, ExperimentSpec};

/// Marker left in the output directory while a sweep is running; it stays
/// behind (holding the error) if the sweep fails.
pub const RUNNING_MARKER: &str = "RUNNING";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<copg::Error> for CliError {
    fn from(e: copg::Error) -> Self {
        match e {
            copg::Error::Config(msg) => CliError::Config(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Trains every seed of the spec, writing `manifest.toml` and per-seed
/// `metrics.csv` and `checkpoint.bin`. Returns one summary line per seed.
pub fn cmd_train(spec: &ExperimentSpec) -> Result<Vec<String>, CliError> {
    let out = spec
        .out_dir
        .clone()
        .ok_or_else(|| CliError::Config("no output directory: set `out_dir` or pass --out".into()))?;
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let marker = out.join(RUNNING_MARKER);
    fs::write(&marker, format!("{}\n", spec.name)).map_err(|e| io_err(&marker, e))?;
    let manifest = out.join("manifest.toml");
    fs::write(&manifest, spec.manifest()?).map_err(|e| io_err(&manifest, e))?;

    let result = (|| {
        let mut lines = Vec::new();
        for &seed in &spec.seeds {
            let config = spec.config_for_seed(seed);
            let outcome = train(&config)?;
            let dir = seed_dir(&out, seed);
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            let csv_path = dir.join("metrics.csv");
            let file = fs::File::create(&csv_path).map_err(|e| io_err(&csv_path, e))?;
            write_metrics_csv(std::io::BufWriter::new(file), &outcome.metrics)?;
            outcome.checkpoint.save(dir.join("checkpoint.bin"))?;
            let last = outcome.metrics.last();
            lines.push(format!(
                "{} seed {seed}: {} batches, final mean_episode_return {}, final mean_episode_cost {}",
                spec.name,
                outcome.metrics.len(),
                last.map_or("n/a".into(), |m| format!("{:.6}", m.mean_episode_return)),
                last.map_or("n/a".into(), |m| format!("{:.6}", m.mean_episode_cost)),
            ));
        }
        Ok::<_, CliError>(lines)
    })();
    match &result {
        Ok(_) => fs::remove_file(&marker).map_err(|e| io_err(&marker, e))?,
        Err(e) => {
            let _ = fs::write(&marker, format!("{}\nfailed: {e}\n", spec.name));
        }
    }
    result
}

/// Aggregates runs, writes the plot data to `out` and returns the summary.
pub fn cmd_compare(runs: &[PathBuf], metric: &str, out: &Path, window: usize) -> Result<String, CliError> {
    let groups = compare::load_groups(runs, metric)?;
    let comparison = compare::compare(&groups, window)?;
    fs::write(out, comparison.plot_csv()).map_err(|e| io_err(out, e))?;
    Ok(comparison.summary(metric))
}

fn load_policy_into(trainer: &mut Trainer, checkpoint: &Path) -> Result<(), CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let current = trainer.policy();
    let loaded = GaussianPolicy::from_checkpoint(
        &ck,
        POLICY_PREFIX,
        current.action_low().to_vec(),
        current.action_high().to_vec(),
    )?;
    trainer
        .policy_mut()
        .set_params(&loaded.params())
        .map_err(|_| CliError::Config("checkpoint network shape does not match the config".into()))
}

/// Histogram bin edges for gradient ratios.
pub const RATIO_BINS: [f64; 11] = [0.0, 0.5, 0.8, 0.9, 0.95, 1.0, 1.05, 1.1, 1.25, 2.0, f64::INFINITY];

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticReport {
    pub steps: usize,
    pub epsilon: f64,
    pub ratios: Vec<GradientRatio>,
    /// `(label, bin index, count)` for non-empty bins.
    pub histogram: Vec<(BranchLabel, usize, usize)>,
    pub high_side_positive: Option<f64>,
    pub high_side_negative: Option<f64>,
}

impl DiagnosticReport {
    pub fn from_ratios(ratios: Vec<GradientRatio>, steps: usize, epsilon: f64) -> Self {
        let labels = [BranchLabel::Unclipped, BranchLabel::ClippedHigh, BranchLabel::ClippedLow];
        let mut histogram = Vec::new();
        for label in labels {
            for bin in 0..RATIO_BINS.len() - 1 {
                let count = ratios
                    .iter()
                    .filter(|r| r.label == label)
                    .filter_map(|r| r.ratio)
                    .filter(|&v| v >= RATIO_BINS[bin] && v < RATIO_BINS[bin + 1])
                    .count();
                if count > 0 {
                    histogram.push((label, bin, count));
                }
            }
        }
        let (high_side_positive, high_side_negative) = high_side_fractions(&ratios, epsilon);
        Self {
            steps,
            epsilon,
            ratios,
            histogram,
            high_side_positive,
            high_side_negative,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "gradient-ratio diagnostic: {} samples after {} steps, epsilon {}",
            self.ratios.len(),
            self.steps,
            self.epsilon
        );
        for label in [
            BranchLabel::Unclipped,
            BranchLabel::ClippedHigh,
            BranchLabel::ClippedLow,
            BranchLabel::Dead,
        ] {
            let n = self.ratios.iter().filter(|r| r.label == label).count();
            let _ = writeln!(out, "count {} {n}", label.as_str());
        }
        let _ = writeln!(out, "label,bin_low,bin_high,count");
        for (label, bin, count) in &self.histogram {
            let _ = writeln!(out, "{},{},{},{count}", label.as_str(), RATIO_BINS[*bin], RATIO_BINS[bin + 1]);
        }
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(out, "high_side_fraction advantage>0 {}", fmt(self.high_side_positive));
        let _ = writeln!(out, "high_side_fraction advantage<0 {}", fmt(self.high_side_negative));
        out
    }

    /// One row per sample.
    pub fn samples_csv(&self) -> String {
        let mut out = String::from("label,ratio,importance_ratio,advantage\n");
        for r in &self.ratios {
            let ratio = r.ratio.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{ratio},{},{}", r.label.as_str(), r.importance_ratio, r.advantage);
        }
        out
    }
}

/// Collects one batch with the spec's first seed (policy optionally loaded
/// from a checkpoint), takes `steps` first-order steps and reports the
/// per-sample gradient ratios.
pub fn cmd_diagnose(spec: &ExperimentSpec, checkpoint: Option<&Path>, steps: usize) -> Result<DiagnosticReport, CliError> {
    let config = spec.config_for_seed(spec.seeds[0]);
    let epsilon = config.clip.epsilon;
    let mut trainer = Trainer::new(config)?;
    if let Some(path) = checkpoint {
        load_policy_into(&mut trainer, path)?;
    }
    let run = trainer.diagnose(steps)?;
    Ok(DiagnosticReport::from_ratios(run.ratios, steps, epsilon))
}

/// Greedy-policy mean return and cost over `episodes` episodes.
pub fn cmd_eval(spec: &ExperimentSpec, checkpoint: &Path, episodes: usize) -> Result<(f64, f64), CliError> {
    let seed = spec.seeds[0];
    let mut trainer = Trainer::new(spec.config_for_seed(seed))?;
    load_policy_into(&mut trainer, checkpoint)?;
    let env: &EnvConfig = &spec.train.env;
    Ok(greedy_eval(trainer.policy(), env, episodes, seed)?)
}
