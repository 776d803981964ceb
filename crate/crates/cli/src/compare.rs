//! Cross-seed aggregation of per-batch metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use copg::trainer::MetricRecord;

use crate::spec::load_spec;
use crate::CliError;

/// One metric series per run, grouped by label.
pub type Groups = BTreeMap<String, Vec<(String, Vec<f64>)>>;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub label: String,
    pub runs: usize,
    pub mean: Vec<f64>,
    /// Population standard deviation across runs.
    pub std: Vec<f64>,
    /// Mean of `mean` over the last `window` batches.
    pub final_window_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub batches: usize,
    pub window: usize,
    pub groups: Vec<GroupStats>,
}

/// Per-batch mean and population standard deviation of equal-length series.
pub fn moments(series: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let len = series.first().map_or(0, |s| s.len());
    let n = series.len() as f64;
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for b in 0..len {
        let m = series.iter().map(|s| s[b]).sum::<f64>() / n;
        let var = series.iter().map(|s| (s[b] - m).powi(2)).sum::<f64>() / n;
        mean[b] = m;
        std[b] = var.sqrt();
    }
    (mean, std)
}

/// Aggregates every group. All runs must have the same number of batches.
pub fn compare(groups: &Groups, window: usize) -> Result<Comparison, CliError> {
    if groups.values().all(|g| g.is_empty()) {
        return Err(CliError::Config("no runs to compare".into()));
    }
    if window == 0 {
        return Err(CliError::Config("--window must be positive".into()));
    }
    let all: Vec<(&str, usize)> = groups
        .values()
        .flatten()
        .map(|(name, s)| (name.as_str(), s.len()))
        .collect();
    let batches = all[0].1;
    if all.iter().any(|(_, n)| *n != batches) {
        let listing: Vec<String> = all.iter().map(|(name, n)| format!("{name} ({n} batches)")).collect();
        return Err(CliError::Config(format!("misaligned batch counts: {}", listing.join(", "))));
    }
    if batches == 0 {
        return Err(CliError::Config("runs contain no batches".into()));
    }
    let groups = groups
        .iter()
        .filter(|(_, runs)| !runs.is_empty())
        .map(|(label, runs)| {
            let series: Vec<&[f64]> = runs.iter().map(|(_, s)| s.as_slice()).collect();
            let (mean, std) = moments(&series);
            let tail = &mean[batches.saturating_sub(window)..];
            GroupStats {
                label: label.clone(),
                runs: runs.len(),
                final_window_mean: tail.iter().sum::<f64>() / tail.len() as f64,
                mean,
                std,
            }
        })
        .collect();
    Ok(Comparison { batches, window, groups })
}

impl Comparison {
    /// `batch,<label>_mean,<label>_std,...`
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("batch");
        for g in &self.groups {
            let _ = write!(out, ",{0}_mean,{0}_std", g.label);
        }
        out.push('\n');
        for b in 0..self.batches {
            let _ = write!(out, "{b}");
            for g in &self.groups {
                let _ = write!(out, ",{},{}", g.mean[b], g.std[b]);
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self, metric: &str) -> String {
        let mut out = String::new();
        for g in &self.groups {
            let _ = writeln!(
                out,
                "{}: final-window mean {} = {:.6} (last {} of {} batches, {} runs)",
                g.label,
                metric,
                g.final_window_mean,
                self.window.min(self.batches),
                self.batches,
                g.runs
            );
        }
        out
    }
}

/// Reads one column of a metrics CSV.
pub fn read_metric(path: &Path, metric: &str) -> Result<Vec<f64>, CliError> {
    if !MetricRecord::COLUMNS.contains(&metric) {
        return Err(CliError::Config(format!(
            "unknown metric `{metric}`; expected one of {}",
            MetricRecord::COLUMNS.join(", ")
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?
        .clone();
    let col = headers
        .iter()
        .position(|h| h == metric)
        .ok_or_else(|| CliError::Runtime(format!("{}: no column `{metric}`", path.display())))?;
    reader
        .records()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            row.get(col)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| CliError::Runtime(format!("{}: row {i}: `{metric}` is not a number", path.display())))
        })
        .collect()
}

fn run_label(dir: &Path) -> String {
    if let Ok(spec) = load_spec(&dir.join("manifest.toml")) {
        return spec.train.algorithm.as_str().to_string();
    }
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Metrics files of a run path: `seed_*/metrics.csv` and `metrics.csv` under
/// a directory, or the path itself when it is a file.
pub fn metric_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Runtime(e.to_string()))?;
        let candidate = entry.path().join("metrics.csv");
        if entry.file_name().to_string_lossy().starts_with("seed_") && candidate.is_file() {
            files.push(candidate);
        }
    }
    let direct = path.join("metrics.csv");
    if direct.is_file() {
        files.push(direct);
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Runtime(format!("{}: no metrics files found", path.display())));
    }
    Ok(files)
}

/// Groups runs by algorithm (from each run's manifest) or, failing that, by
/// directory name. A file path is labelled by its parent directory.
pub fn load_groups(paths: &[PathBuf], metric: &str) -> Result<Groups, CliError> {
    let mut groups = Groups::new();
    for path in paths {
        let dir = if path.is_file() {
            path.parent().map(Path::to_path_buf).unwrap_or_default()
        } else {
            path.clone()
        };
        let label = run_label(&dir);
        for file in metric_files(path)? {
            let series = read_metric(&file, metric)?;
            groups.entry(label.clone()).or_default().push((file.display().to_string(), series));
        }
    }
    Ok(groups)
}
