use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Written as the first line of every metrics file.
pub const CSV_COMMENT: &str =
    "# entropies are measured after the policy update; policy_entropy_bounded is a one-draw-per-state Monte-Carlo mean";

/// One row per batch. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub batch_index: usize,
    pub mean_episode_return: f64,
    pub mean_episode_cost: f64,
    pub policy_entropy: f64,
    pub policy_entropy_bounded: f64,
    pub approx_kl_final: f64,
    pub clip_fraction: f64,
    pub lambda: Option<f64>,
    pub value_loss: f64,
    pub epochs_used: usize,
}

impl MetricRecord {
    pub const COLUMNS: [&'static str; 10] = [
        "batch_index",
        "mean_episode_return",
        "mean_episode_cost",
        "policy_entropy",
        "policy_entropy_bounded",
        "approx_kl_final",
        "clip_fraction",
        "lambda",
        "value_loss",
        "epochs_used",
    ];

    pub fn is_finite(&self) -> bool {
        [
            self.mean_episode_return,
            self.mean_episode_cost,
            self.policy_entropy,
            self.policy_entropy_bounded,
            self.approx_kl_final,
            self.clip_fraction,
            self.lambda.unwrap_or(0.0),
            self.value_loss,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Comment line, header row, then one row per record.
pub fn write_metrics_csv<W: Write>(mut out: W, records: &[MetricRecord]) -> Result<()> {
    writeln!(out, "{CSV_COMMENT}")?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(MetricRecord::COLUMNS).map_err(csv_error)?;
    for r in records {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn metrics_csv_string(records: &[MetricRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, records)?;
    String::from_utf8(buf).map_err(|e| Error::Io(std::io::Error::other(e)))
}

pub fn read_metrics_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricRecord>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}
