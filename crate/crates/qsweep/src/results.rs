//! Run-result rows and their CSV persistence.
//!
//! The results file is append-only CSV with a fixed column order:
//! `run_id, preset, multiplier, params, cost_linear_ratio,
//! cost_quadratic_ratio, mem_bits, train_logloss, eval_logloss, gen_gap,
//! top1, status`. Floats serialize as shortest round-trip decimal, so
//! re-reading a file reproduces every value bit-exactly.

use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const STATUS_OK: &str = "ok";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub preset: String,
    pub multiplier: f64,
    pub params: u64,
    pub cost_linear_ratio: f64,
    pub cost_quadratic_ratio: f64,
    pub mem_bits: u64,
    pub train_logloss: f64,
    pub eval_logloss: f64,
    pub gen_gap: f64,
    pub top1: f64,
    pub status: String,
}

impl RunResult {
    /// Placeholder row for a run that did not produce metrics.
    pub fn failed(run_id: String, preset: String, multiplier: f64, message: String) -> Self {
        RunResult {
            run_id,
            preset,
            multiplier,
            params: 0,
            cost_linear_ratio: 0.0,
            cost_quadratic_ratio: 0.0,
            mem_bits: 0,
            train_logloss: 0.0,
            eval_logloss: 0.0,
            gen_gap: 0.0,
            top1: 0.0,
            status: format!("error: {message}"),
        }
    }
}

/// Append rows, writing the header only when creating the file.
pub fn append_results(path: &Path, rows: &[RunResult]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let fresh = !path.exists();
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<RunResult>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str) -> RunResult {
        RunResult {
            run_id: id.into(),
            preset: "int8".into(),
            multiplier: 1.0,
            params: 127_642,
            cost_linear_ratio: 0.5,
            cost_quadratic_ratio: 0.25,
            mem_bits: 1_021_136,
            train_logloss: 0.12345678901234567,
            eval_logloss: 0.2345678901234567,
            gen_gap: 0.2345678901234567 - 0.12345678901234567,
            top1: 0.96875,
            status: STATUS_OK.into(),
        }
    }

    #[test]
    fn round_trip_is_lossless_for_all_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let rows = vec![row("a"), row("b")];
        append_results(&path, &rows).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back, rows);
        // bitwise check on the floats specifically
        assert_eq!(back[0].train_logloss.to_bits(), rows[0].train_logloss.to_bits());
        assert_eq!(back[0].gen_gap.to_bits(), rows[0].gen_gap.to_bits());
    }

    #[test]
    fn append_does_not_duplicate_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        append_results(&path, &[row("a")]).unwrap();
        append_results(&path, &[row("b")]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("run_id")).count(), 1);
        assert_eq!(read_results(&path).unwrap().len(), 2);
    }

    #[test]
    fn gen_gap_equals_stored_difference() {
        let r = row("a");
        assert_eq!(r.gen_gap.to_bits(), (r.eval_logloss - r.train_logloss).to_bits());
    }
}
