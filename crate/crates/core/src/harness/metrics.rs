//! Result records, aggregation, parallel sweeps, and CSV/JSON emission.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::protocol::PutRecord;

use super::scenario::Scenario;
use super::ScenarioError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GetRow {
    pub ok: bool,
    pub tries: u32,
    pub latency_ms: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HeightRecord {
    pub height: u64,
    /// Highest certificate round any honest node committed this height at.
    pub commit_round: u32,
    pub commit_ms: u64,
    /// Commit round minus rounds already burned before GST.
    pub max_rounds_post_gst: u32,
}

/// Everything one scenario run produced.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioResult {
    pub name: String,
    pub seed: u64,
    pub n: u64,
    pub f: u64,
    pub byz_weight: u64,
    pub strategy: String,
    pub file_size: u64,
    #[serde(skip)]
    pub puts: Vec<PutRecord>,
    pub gets: Vec<GetRow>,
    pub total_file_bytes: u64,
    pub total_padded_bytes: u64,
    pub total_stored_bytes: u64,
    pub success_rate: f64,
    pub mean_tries: f64,
    pub mean_put_ms: f64,
    pub mean_get_ms: f64,
    /// Stored bytes over true file bytes.
    pub storage_ratio_true: f64,
    /// Stored bytes over padded bytes; exactly n/(n-f) when all puts land.
    pub storage_ratio_padded: f64,
    pub final_height: u64,
    pub retrieve_reports: u64,
    pub wrong_file_acceptances: u64,
    pub heights: Vec<HeightRecord>,
    pub violations: Vec<String>,
    pub trace_hash: String,
    pub sim_ms: u64,
}

impl ScenarioResult {
    /// Recompute the aggregate columns from the per-trial rows; aggregates
    /// carry no information of their own.
    pub fn finalize(&mut self) {
        let total = self.gets.len();
        let ok = self.gets.iter().filter(|g| g.ok).count();
        self.success_rate = if total == 0 {
            1.0
        } else {
            ok as f64 / total as f64
        };
        self.mean_tries = if total == 0 {
            0.0
        } else {
            self.gets.iter().map(|g| g.tries as f64).sum::<f64>() / total as f64
        };
        let put_lat: Vec<f64> = self
            .puts
            .iter()
            .filter_map(|p| p.completed_ms.map(|c| (c - p.started_ms) as f64))
            .collect();
        self.mean_put_ms = if put_lat.is_empty() {
            0.0
        } else {
            put_lat.iter().sum::<f64>() / put_lat.len() as f64
        };
        let get_lat: Vec<f64> = self
            .gets
            .iter()
            .filter_map(|g| g.latency_ms.map(|l| l as f64))
            .collect();
        self.mean_get_ms = if get_lat.is_empty() {
            0.0
        } else {
            get_lat.iter().sum::<f64>() / get_lat.len() as f64
        };
        self.storage_ratio_true = if self.total_file_bytes == 0 {
            0.0
        } else {
            self.total_stored_bytes as f64 / self.total_file_bytes as f64
        };
        self.storage_ratio_padded = if self.total_padded_bytes == 0 {
            0.0
        } else {
            self.total_stored_bytes as f64 / self.total_padded_bytes as f64
        };
    }

    pub fn put_success_count(&self) -> usize {
        self.puts.iter().filter(|p| p.completed_ms.is_some()).count()
    }
}

/// One CSV line per retrieval session, with its file's put columns.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FileRow {
    pub scenario: String,
    pub seed: u64,
    pub n: u64,
    pub byz_weight: u64,
    pub strategy: String,
    pub file_bytes: u64,
    pub padded_bytes: u64,
    pub stored_bytes: u64,
    pub put_ms: Option<u64>,
    pub put_attempts: u32,
    pub get_ok: bool,
    pub get_tries: u32,
    pub get_ms: Option<u64>,
}

pub fn rows_of(result: &ScenarioResult) -> Vec<FileRow> {
    let mut rows = Vec::new();
    let mut gets = result.gets.iter();
    for put in &result.puts {
        let stored = put.n * put.chunk_size;
        // workload issues gets per file in order; pair them back up
        let per_file = if result.puts.is_empty() {
            0
        } else {
            result.gets.len() / result.puts.len()
        };
        for _ in 0..per_file {
            let get = gets.next();
            rows.push(FileRow {
                scenario: result.name.clone(),
                seed: result.seed,
                n: result.n,
                byz_weight: result.byz_weight,
                strategy: result.strategy.clone(),
                file_bytes: put.bytes,
                padded_bytes: put.padded_bytes,
                stored_bytes: stored,
                put_ms: put.completed_ms.map(|c| c - put.started_ms),
                put_attempts: put.attempts,
                get_ok: get.map(|g| g.ok).unwrap_or(false),
                get_tries: get.map(|g| g.tries).unwrap_or(0),
                get_ms: get.and_then(|g| g.latency_ms),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Csv,
    Json,
    Both,
}

impl EmitFormat {
    pub fn parse(s: &str) -> Option<EmitFormat> {
        match s {
            "csv" => Some(EmitFormat::Csv),
            "json" => Some(EmitFormat::Json),
            "both" => Some(EmitFormat::Both),
            _ => None,
        }
    }
}

/// Write per-trial CSV and/or aggregate JSON under `out_dir`. Outputs are
/// byte-deterministic for a fixed result set.
pub fn emit(
    results: &[ScenarioResult],
    out_dir: &Path,
    format: EmitFormat,
) -> Result<Vec<PathBuf>, ScenarioError> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    if matches!(format, EmitFormat::Csv | EmitFormat::Both) {
        let path = out_dir.join("trials.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| {
            ScenarioError::Invalid(format!("csv: {e}"))
        })?;
        for result in results {
            for row in rows_of(result) {
                w.serialize(row)
                    .map_err(|e| ScenarioError::Invalid(format!("csv: {e}")))?;
            }
        }
        w.flush()?;
        written.push(path);
    }

    if matches!(format, EmitFormat::Json | EmitFormat::Both) {
        let path = out_dir.join("aggregates.json");
        let mut file = std::fs::File::create(&path)?;
        let json = serde_json::to_string_pretty(results)
            .map_err(|e| ScenarioError::Invalid(format!("json: {e}")))?;
        file.write_all(json.as_bytes())?;
        file.write_all(b"\n")?;
        written.push(path);
    }
    Ok(written)
}

/// Run every scenario of a grid; independent runs execute on parallel
/// threads and results come back in input order.
pub fn sweep(grid: &[Scenario]) -> Vec<Result<ScenarioResult, ScenarioError>> {
    grid.par_iter().map(super::runner::run_scenario).collect()
}

/// Least-squares line fit returning (slope, intercept, r-squared).
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    assert!(points.len() >= 2);
    let sx: f64 = points.iter().map(|(x, _)| x).sum();
    let sy: f64 = points.iter().map(|(_, y)| y).sum();
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = points.iter().map(|(_, y)| (y - mean_y).powi(2)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (slope, intercept, r2)
}
