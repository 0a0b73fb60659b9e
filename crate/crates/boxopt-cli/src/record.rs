//! Benchmark run records and their CSV/JSON serialization.
//!
//! The column set is stable; a golden-header test pins it. `extra_params`
//! is a JSON object string carrying experiment-specific settings.

use serde::Serialize;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub experiment: String,
    /// Variable count of the solved problem.
    pub n: usize,
    /// Row/constraint count (experiment-specific; 0 when not meaningful).
    pub m: usize,
    pub seed: u64,
    pub rep: usize,
    /// Wall time of the solve call only (generation excluded).
    pub time_ms: f64,
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    pub f: f64,
    pub violation_inf: f64,
    pub stationarity_inf: f64,
    pub status: String,
    pub solver_tol: f64,
    pub feas_tol: f64,
    pub extra_params: String,
}

pub fn write_csv(out: &mut dyn Write, records: &[RunRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(out: &mut dyn Write, records: &[RunRecord]) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut *out, records)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Per (experiment, n) aggregate over repetitions.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub n: usize,
    pub reps: usize,
    pub mean_time_ms: f64,
    pub std_time_ms: f64,
    pub mean_f: f64,
    pub converged: usize,
}

pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in records {
        let key = (r.experiment.clone(), r.n);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(experiment, n)| {
            let group: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.experiment == experiment && r.n == n)
                .collect();
            let count = group.len() as f64;
            let mean_time = group.iter().map(|r| r.time_ms).sum::<f64>() / count;
            let var_time = group
                .iter()
                .map(|r| (r.time_ms - mean_time).powi(2))
                .sum::<f64>()
                / count;
            SummaryRow {
                experiment,
                n,
                reps: group.len(),
                mean_time_ms: mean_time,
                std_time_ms: var_time.sqrt(),
                mean_f: group.iter().map(|r| r.f).sum::<f64>() / count,
                converged: group.iter().filter(|r| r.status == "converged").count(),
            }
        })
        .collect()
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}
