//! Command-line interface.
//!
//! Subcommands: `train`, `sweep`, `cost`, `pareto`, `quantize-demo`.
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};

use quantcore::{compute_scales, round_half_away, Precision};

use crate::config::ExperimentConfig;
use crate::cost::{self, CostModelKind, LayerShape};
use crate::error::{Error, Result};
use crate::model::ResNetModel;
use crate::pareto::{pareto_frontier, TradeoffPoint};
use crate::results;
use crate::sweep::{run_sweep, SweepGrid};
use crate::train;

#[derive(Parser)]
#[command(
    name = "qsweep",
    about = "Quantization-aware ResNet training, cost models and Pareto tradeoff analysis",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CostKindArg {
    Linear,
    Quadratic,
}

impl From<CostKindArg> for CostModelKind {
    fn from(v: CostKindArg) -> Self {
        match v {
            CostKindArg::Linear => CostModelKind::Linear,
            CostKindArg::Quadratic => CostModelKind::Quadratic,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CostAxis {
    Linear,
    Quadratic,
    Memory,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Run one training experiment from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a multiplier x preset grid of experiments.
    Sweep {
        /// JSON grid file: {"base": <config>, "multipliers": [...],
        /// "presets": [...]}.
        #[arg(long)]
        grid: PathBuf,
        /// Output directory for results.csv and per-run artifacts.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Evaluate the compute/memory cost model over a layer-shape manifest
    /// (or a model built from a config) and print per-layer CSV.
    #[command(group(ArgGroup::new("source").required(true).args(["manifest", "config"])))]
    Cost {
        /// JSON layer-shape manifest, as exported next to each run.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Build the model from an experiment config instead.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "model", value_enum)]
        model: CostKindArg,
        /// Also write the layer-shape manifest here (config source only).
        #[arg(long)]
        emit_manifest: Option<PathBuf>,
    },
    /// Compute the Pareto frontier of a results file.
    Pareto {
        #[arg(long)]
        results: PathBuf,
        /// Cost axis: normalized linear/quadratic compute or memory bits.
        #[arg(long, value_enum)]
        cost: CostAxis,
        /// Frontier CSV path; per-setting curves land next to it with a
        /// `_curves.csv` suffix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the quantization staircase (input, scaled, clipped, rounded,
    /// rescaled, error) for a sample vector.
    #[command(group(ArgGroup::new("sign").required(true).args(["signed", "unsigned"])))]
    QuantizeDemo {
        #[arg(long)]
        bits: u8,
        #[arg(long)]
        signed: bool,
        #[arg(long)]
        unsigned: bool,
        /// Clipping bound defining the scale.
        #[arg(long, default_value_t = 1.0)]
        bound: f64,
        /// Comma-separated input values; a built-in ramp is used if absent.
        #[arg(long)]
        values: Option<String>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let result = train::train(&cfg)?;
            println!(
                "run {} finished: top1 {:.4}, eval logloss {:.4}, results in {}",
                result.run_id, result.top1, result.eval_logloss, cfg.output.dir
            );
            Ok(())
        }
        Cmd::Sweep { grid, out, workers } => {
            let grid = SweepGrid::from_file(&grid)?;
            let rows = run_sweep(&grid, &out, workers)?;
            let failed = rows.iter().filter(|r| r.status != results::STATUS_OK).count();
            println!(
                "sweep finished: {} runs, {} failed, results in {}",
                rows.len(),
                failed,
                out.join("results.csv").display()
            );
            Ok(())
        }
        Cmd::Cost {
            manifest,
            config,
            model,
            emit_manifest,
        } => cmd_cost(manifest, config, model.into(), emit_manifest),
        Cmd::Pareto { results, cost, out } => cmd_pareto(&results, cost, &out),
        Cmd::QuantizeDemo {
            bits,
            signed,
            unsigned: _,
            bound,
            values,
        } => cmd_quantize_demo(bits, signed, bound, values),
    }
}

fn load_manifest(path: &Path) -> Result<Vec<LayerShape>> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_cost(
    manifest: Option<PathBuf>,
    config: Option<PathBuf>,
    kind: CostModelKind,
    emit_manifest: Option<PathBuf>,
) -> Result<()> {
    let shapes = match (&manifest, &config) {
        (Some(m), _) => load_manifest(m)?,
        (None, Some(c)) => {
            let cfg = ExperimentConfig::from_file(c)?;
            let (quant, _) = cfg.build_quant()?;
            let model: ResNetModel<f32> = ResNetModel::build(cfg.build_spec()?, quant, 0)?;
            model.layer_shapes(1)
        }
        (None, None) => unreachable!("clap group enforces one source"),
    };
    if let Some(out) = emit_manifest {
        fs::write(&out, serde_json::to_string_pretty(&shapes)?)?;
    }
    let report = cost::normalized_model_cost(&shapes, kind)?;
    let kind_name = match kind {
        CostModelKind::Linear => "linear",
        CostModelKind::Quadratic => "quadratic",
    };
    println!("layer,compute_{kind_name},memory_bits");
    for l in &report.per_layer {
        println!("{},{},{}", l.name, l.compute, l.memory_bits);
    }
    println!("total,{},{}", report.total_compute, report.total_memory_bits);
    let ratio = report.normalized_compute.expect("normalized");
    let mem_ratio = report.normalized_memory.expect("normalized");
    println!("normalized_compute_ratio,{:.4}", ratio.as_f64());
    println!("normalized_compute_ratio_exact,{}/{}", ratio.num, ratio.den);
    println!("normalized_memory_ratio,{:.4}", mem_ratio.as_f64());
    Ok(())
}

fn cmd_pareto(results_path: &Path, axis: CostAxis, out: &Path) -> Result<()> {
    let rows = results::read_results(results_path)?;
    let usable: Vec<_> = rows
        .iter()
        .filter(|r| r.status == results::STATUS_OK)
        .collect();
    if usable.is_empty() {
        return Err(Error::EmptyPoints);
    }
    let mut points = Vec::with_capacity(usable.len());
    for r in &usable {
        let cost = match axis {
            CostAxis::Linear => r.cost_linear_ratio,
            CostAxis::Quadratic => r.cost_quadratic_ratio,
            CostAxis::Memory => r.mem_bits as f64,
        };
        points.push(TradeoffPoint::new(cost, r.top1, r.run_id.clone())?);
    }
    let frontier = pareto_frontier(&points)?;

    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["run_id", "preset", "multiplier", "cost", "accuracy"])?;
    for p in &frontier {
        let row = usable.iter().find(|r| r.run_id == p.label).expect("label from rows");
        w.write_record([
            p.label.as_str(),
            row.preset.as_str(),
            &format!("{}", row.multiplier),
            &format!("{}", p.cost),
            &format!("{}", p.accuracy),
        ])?;
    }
    w.flush()?;

    // per-setting curves, one series per preset, sorted by cost
    let curves_path = curves_path_for(out);
    let mut w = csv::Writer::from_path(&curves_path)?;
    w.write_record(["preset", "run_id", "multiplier", "cost", "accuracy"])?;
    let mut presets: Vec<String> = usable.iter().map(|r| r.preset.clone()).collect();
    presets.sort();
    presets.dedup();
    for preset in &presets {
        let mut series: Vec<_> = usable
            .iter()
            .zip(&points)
            .filter(|(r, _)| &r.preset == preset)
            .collect();
        series.sort_by(|a, b| a.1.cost.partial_cmp(&b.1.cost).unwrap());
        for (r, p) in series {
            w.write_record([
                preset.as_str(),
                r.run_id.as_str(),
                &format!("{}", r.multiplier),
                &format!("{}", p.cost),
                &format!("{}", p.accuracy),
            ])?;
        }
    }
    w.flush()?;
    println!(
        "frontier: {} of {} points -> {}; curves -> {}",
        frontier.len(),
        points.len(),
        out.display(),
        curves_path.display()
    );
    Ok(())
}

pub fn curves_path_for(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "frontier".into());
    out.with_file_name(format!("{stem}_curves.csv"))
}

fn cmd_quantize_demo(bits: u8, signed: bool, bound: f64, values: Option<String>) -> Result<()> {
    let precision = if signed {
        Precision::signed(bits)?
    } else {
        Precision::unsigned(bits)?
    };
    let inputs: Vec<f64> = match values {
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad value {s:?}: {e}")))
            })
            .collect::<Result<_>>()?,
        None => vec![
            -2.0, -1.25, -1.0, -0.6, -0.3, 0.0, 0.25, 0.5, 0.77, 1.0, 1.5, 2.0,
        ],
    };
    let scales = compute_scales(&[bound], &precision)?;
    let s = scales.values()[0];
    let range = precision.quant_range()?;
    println!("input,scaled,clipped,rounded,rescaled,error");
    for &x in &inputs {
        let scaled = x * s;
        let clipped = scaled.clamp(range.lo as f64, range.hi as f64);
        let rounded = round_half_away(clipped);
        let rescaled = rounded / s;
        println!(
            "{x},{scaled},{clipped},{rounded},{rescaled},{}",
            rescaled - x
        );
    }
    Ok(())
}
