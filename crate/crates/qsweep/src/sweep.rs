//! Grid sweeps over filter multipliers and quantization settings.
//!
//! Each cell of the grid is one independent training run; workers own the
//! entire state of their run, and the shared results file is written after
//! all runs complete, in grid order. Failed runs are recorded with an error
//! status and do not stop the sweep.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::QuantSettingPreset;
use crate::results::{self, RunResult};
use crate::train;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepGrid {
    pub base: ExperimentConfig,
    pub multipliers: Vec<f64>,
    pub presets: Vec<String>,
}

impl SweepGrid {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let grid: SweepGrid = serde_json::from_str(&text)?;
        grid.check()?;
        Ok(grid)
    }

    /// The default desk-scale grid: multipliers {0.5, 1.0, 2.0} against all
    /// four quantization settings.
    pub fn desk(base: ExperimentConfig) -> Self {
        SweepGrid {
            base,
            multipliers: vec![0.5, 1.0, 2.0],
            presets: QuantSettingPreset::ALL
                .iter()
                .map(|p| p.name().to_string())
                .collect(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.multipliers.is_empty() || self.presets.is_empty() {
            return Err(Error::Config("sweep grid must be non-empty".into()));
        }
        for p in &self.presets {
            QuantSettingPreset::from_name(p)?;
        }
        Ok(())
    }

    /// One config per grid cell, preset-major then multiplier, with
    /// deterministic run ids. All cells share the base seed so preset
    /// comparisons at a fixed multiplier are paired.
    pub fn expand(&self, out_dir: &Path) -> Result<Vec<ExperimentConfig>> {
        self.check()?;
        let mut out = Vec::with_capacity(self.presets.len() * self.multipliers.len());
        for preset in &self.presets {
            for &c in &self.multipliers {
                let mut cfg = self.base.clone();
                cfg.model.filter_multiplier = c;
                cfg.quant.preset = Some(preset.clone());
                cfg.quant.custom = None;
                cfg.output.dir = out_dir.to_string_lossy().into_owned();
                cfg.output.run_id = Some(format!("{preset}_c{c:.2}"));
                cfg.validate()?;
                out.push(cfg);
            }
        }
        Ok(out)
    }
}

/// Execute the whole grid with `workers` threads (min 1) and append one
/// results row per cell, in grid order, to `<out_dir>/results.csv`.
pub fn run_sweep(grid: &SweepGrid, out_dir: &Path, workers: usize) -> Result<Vec<RunResult>> {
    let configs = grid.expand(out_dir)?;
    let n = configs.len();
    let workers = workers.max(1).min(n);
    let next_job = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunResult>>> = Mutex::new(vec![None; n]);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = next_job.fetch_add(1, Ordering::SeqCst);
                if job >= n {
                    break;
                }
                let cfg = &configs[job];
                let row = match run_cell(cfg) {
                    Ok(r) => r,
                    Err(e) => RunResult::failed(
                        cfg.run_id(),
                        cfg.quant.preset.clone().unwrap_or_else(|| "custom".into()),
                        cfg.model.filter_multiplier,
                        e.to_string(),
                    ),
                };
                slots.lock().expect("results mutex")[job] = Some(row);
            });
        }
    });

    let rows: Vec<RunResult> = slots
        .into_inner()
        .expect("results mutex")
        .into_iter()
        .map(|r| r.expect("every job filled"))
        .collect();
    results::append_results(&out_dir.join("results.csv"), &rows)?;
    Ok(rows)
}

fn run_cell(cfg: &ExperimentConfig) -> Result<RunResult> {
    let run = train::train_full(cfg)?;
    // per-run artifacts are persisted here; the shared results.csv row is
    // appended by the sweep in grid order
    train::persist_artifacts_only(cfg, &run)?;
    Ok(run.result)
}
