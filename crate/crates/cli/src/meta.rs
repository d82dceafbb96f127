use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use bipath_core::io::write_atomic;
use bipath_core::train::MetricsRow;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct MetricsJson {
    pub epoch: usize,
    pub split: &'static str,
    pub count_mae: f64,
    pub count_mse: f64,
    pub pixel_mae: f64,
    pub pixel_mse: f64,
    pub loss: f64,
}

impl From<&MetricsRow> for MetricsJson {
    fn from(r: &MetricsRow) -> Self {
        Self {
            epoch: r.epoch,
            split: r.split,
            count_mae: r.count_mae,
            count_mse: r.count_mse,
            pixel_mae: r.pixel_mae,
            pixel_mse: r.pixel_mse,
            loss: r.loss,
        }
    }
}

/// Provenance written next to every artifact a command produces.
#[derive(Debug, Serialize)]
pub struct RunMetadata {
    pub command: String,
    pub config: String,
    pub seed: u64,
    pub code_version: &'static str,
    pub threads: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub metrics: Vec<MetricsJson>,
}

pub fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunMetadata {
    pub fn new(command: &str, config: String, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            code_version: env!("CARGO_PKG_VERSION"),
            threads: rayon::current_num_threads(),
            started_unix: now(),
            finished_unix: 0.0,
            metrics: Vec::new(),
        }
    }

    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.finished_unix = now();
        let text = serde_json::to_string_pretty(&self)?;
        write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
    }
}
