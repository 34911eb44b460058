//! The training loop: dynamic weight quantization from step zero, EMA
//! calibration of activation bounds during warmup, a one-shot freeze at the
//! schedule step, then quantized training to the end. Metrics, cost-model
//! evaluation and persistence happen at the end of the run.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nnkit::graph::{argmax_rows, Mode};
use nnkit::{checkpoint, cosine_lr, Graph, SgdMomentum, Tensor};
use quantcore::CalibrationSchedule;

use crate::config::ExperimentConfig;
use crate::cost::{self, CostModelKind};
use crate::data::{self, eval_batches, BatchStream, Dataset};
use crate::error::{Error, Result};
use crate::model::{ModelState, ResNetModel};
use crate::results::{self, RunResult, STATUS_OK};

/// Everything observable about a finished run, for tests and analysis.
pub struct TrainedRun {
    pub result: RunResult,
    pub model: ResNetModel<f32>,
    pub state: ModelState<f32>,
    pub history: TrainHistory,
    pub wall_seconds: f64,
}

/// Step-by-step instrumentation collected during training.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    /// Loss of the very first batch, before any update.
    pub initial_loss: f64,
    /// Per-step training losses.
    pub losses: Vec<f32>,
    /// Scheduled freeze step (None when the model has no quantized layers).
    pub freeze_step: Option<usize>,
    /// Calibrating -> Frozen transitions observed (per layer state).
    pub freeze_transitions: u64,
    /// Activation-quantization events recorded in forward passes before the
    /// freeze step. Must stay zero.
    pub act_quant_events_before_freeze: u64,
    /// Activation-quantization events from the freeze step on.
    pub act_quant_events_after_freeze: u64,
    /// Frozen bounds snapshot taken at the freeze step, one vector per
    /// calibration state.
    pub bounds_at_freeze: Vec<Vec<f32>>,
    /// The same bounds read again after the final step.
    pub bounds_at_end: Vec<Vec<f32>>,
}

fn snapshot_bounds(state: &ModelState<f32>) -> Vec<Vec<f32>> {
    state
        .calib
        .iter()
        .filter_map(|c| c.frozen_bounds().map(|b| b.to_vec()))
        .collect()
}

/// Run training per the config and return the full artifacts without
/// touching the filesystem.
pub fn train_full(cfg: &ExperimentConfig) -> Result<TrainedRun> {
    cfg.validate()?;
    let started = Instant::now();
    let spec = cfg.build_spec()?;
    let (quant_cfg, preset_label) = cfg.build_quant()?;
    let seed = cfg.train.seed;

    let dataset = data::load_dataset(&cfg.dataset, seed)?;
    if dataset.resolution != spec.input_resolution || dataset.channels != spec.input_channels {
        return Err(Error::Config(format!(
            "dataset {}x{}x{} does not match model input {}x{}x{}",
            dataset.resolution,
            dataset.resolution,
            dataset.channels,
            spec.input_resolution,
            spec.input_resolution,
            spec.input_channels
        )));
    }
    if dataset.classes != spec.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model head has {}",
            dataset.classes, spec.num_classes
        )));
    }

    let mut model: ResNetModel<f32> = ResNetModel::build(spec, quant_cfg, seed)?;
    let mut state = model.init_state(cfg.calibration.ema_decay)?;
    let has_quant = !state.calib.is_empty();
    let schedule = if has_quant {
        Some(CalibrationSchedule::from_fraction(
            cfg.calibration.freeze_fraction,
            cfg.train.steps,
        )?)
    } else {
        None
    };

    let mut stream = BatchStream::new(
        &dataset.train,
        cfg.train.batch_size,
        seed,
        dataset.augment_train,
        dataset.resolution,
        dataset.channels,
    );
    let opt = SgdMomentum::new(cfg.train.momentum as f32);
    let base_lr = cfg.effective_base_lr();
    let warmup = cfg.warmup_steps();

    let mut history = TrainHistory {
        freeze_step: schedule.as_ref().map(|s| s.freeze_step()),
        ..TrainHistory::default()
    };

    for step in 0..cfg.train.steps {
        if let Some(schedule) = &schedule {
            for c in state.calib.iter_mut() {
                let was = c.activations_quantized();
                c.maybe_freeze(step, schedule);
                if !was && c.activations_quantized() {
                    history.freeze_transitions += 1;
                }
            }
            if step == schedule.freeze_step() {
                history.bounds_at_freeze = snapshot_bounds(&state);
            }
        }

        let (batch, labels) = stream.next_batch();
        let act_events_before = state.counters.act_quant_events;
        let mut g = Graph::new();
        let pass = model.forward(&mut g, batch, &mut state, Mode::Train, cfg.aqt_mode)?;
        let loss_id = g.softmax_cross_entropy(pass.logits, &labels)?;
        let loss = g.value(loss_id).item();
        let act_events = state.counters.act_quant_events - act_events_before;
        match (&schedule, history.freeze_step) {
            (Some(_), Some(n)) if step < n => history.act_quant_events_before_freeze += act_events,
            (Some(_), Some(_)) => history.act_quant_events_after_freeze += act_events,
            _ => history.act_quant_events_before_freeze += act_events,
        }

        if step == 0 {
            history.initial_loss = loss as f64;
        }
        history.losses.push(loss);
        if loss.is_nan() && step >= 10 {
            return Err(Error::Diverged { step });
        }

        let mut grads = g.backward(loss_id)?;
        for (param, leaf) in model.params.iter_mut().zip(&pass.param_leaves) {
            param.grad = Some(grads.take(*leaf).unwrap_or_else(|| {
                // a parameter that did not influence this loss gets zero grad
                Tensor::zeros(param.value.shape())
            }));
        }
        let lr = cosine_lr(step, cfg.train.steps, base_lr, warmup) as f32;
        opt.step(&mut model.params, lr)?;
    }

    history.bounds_at_end = snapshot_bounds(&state);

    // final metrics: both splits evaluated with running statistics and
    // frozen bounds, so the generalization gap reflects data alone
    let (_, train_logloss) = evaluate(&model, &mut state, &dataset, true, cfg)?;
    let (top1, eval_logloss) = evaluate(&model, &mut state, &dataset, false, cfg)?;
    let gen_gap = eval_logloss - train_logloss;

    let shapes = model.layer_shapes(1);
    let linear = cost::normalized_model_cost(&shapes, CostModelKind::Linear)?;
    let quadratic = cost::normalized_model_cost(&shapes, CostModelKind::Quadratic)?;

    let result = RunResult {
        run_id: cfg.run_id(),
        preset: preset_label,
        multiplier: cfg.model.filter_multiplier,
        params: model.count_params(),
        cost_linear_ratio: linear.normalized_compute.expect("normalized").as_f64(),
        cost_quadratic_ratio: quadratic.normalized_compute.expect("normalized").as_f64(),
        mem_bits: u64::try_from(linear.total_memory_bits).unwrap_or(u64::MAX),
        train_logloss,
        eval_logloss,
        gen_gap,
        top1,
        status: STATUS_OK.into(),
    };

    Ok(TrainedRun {
        result,
        model,
        state,
        history,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Top-1 accuracy and mean log-loss over one split in eval mode.
fn evaluate(
    model: &ResNetModel<f32>,
    state: &mut ModelState<f32>,
    dataset: &Dataset,
    train_split: bool,
    cfg: &ExperimentConfig,
) -> Result<(f64, f64)> {
    let split = if train_split {
        &dataset.train
    } else {
        &dataset.eval
    };
    evaluate_split(model, state, split, dataset, cfg.train.batch_size, cfg.aqt_mode)
}

/// Shared evaluation core; public so callers can score arbitrary splits.
pub fn evaluate_split(
    model: &ResNetModel<f32>,
    state: &mut ModelState<f32>,
    split: &data::Split,
    dataset: &Dataset,
    batch: usize,
    integer_forward: bool,
) -> Result<(f64, f64)> {
    if split.is_empty() {
        return Err(Error::EmptyEvalStream);
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0f64;
    let mut count = 0usize;
    for (images, labels) in eval_batches(split, batch, dataset.resolution, dataset.channels) {
        let n = labels.len();
        let mut g = Graph::new();
        let pass = model.forward(&mut g, images, state, Mode::Eval, integer_forward)?;
        let loss_id = g.softmax_cross_entropy(pass.logits, &labels)?;
        loss_sum += g.value(loss_id).item() as f64 * n as f64;
        let preds = argmax_rows(g.value(pass.logits));
        correct += preds
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
        count += n;
    }
    Ok((correct as f64 / count as f64, loss_sum / count as f64))
}

/// Train per the config and persist the run: checkpoint, layer-shape
/// manifest, a config sidecar with its digest, and a row appended to
/// `results.csv` in the output directory.
pub fn train(cfg: &ExperimentConfig) -> Result<RunResult> {
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    let run = train_full(cfg)?;
    persist_run(cfg, &run)?;
    Ok(run.result)
}

pub fn persist_run(cfg: &ExperimentConfig, run: &TrainedRun) -> Result<()> {
    persist_artifacts_only(cfg, run)?;
    let out_dir = Path::new(&cfg.output.dir);
    results::append_results(&out_dir.join("results.csv"), &[run.result.clone()])?;
    Ok(())
}

/// Checkpoint, manifest and config sidecar, without the results row (sweeps
/// append rows themselves, in grid order).
pub fn persist_artifacts_only(cfg: &ExperimentConfig, run: &TrainedRun) -> Result<()> {
    let out_dir = Path::new(&cfg.output.dir);
    let run_id = cfg.run_id();
    fs::create_dir_all(out_dir.join("checkpoints"))?;
    fs::create_dir_all(out_dir.join("manifests"))?;
    fs::create_dir_all(out_dir.join("configs"))?;

    let tensors = run.model.state_tensors(&run.state);
    let refs: Vec<(String, &Tensor<f32>)> =
        tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
    checkpoint::save(&out_dir.join("checkpoints").join(&run_id), &refs)?;

    let manifest = run.model.layer_shapes(1);
    fs::write(
        out_dir.join("manifests").join(format!("{run_id}.json")),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    let sidecar = serde_json::json!({
        "run_id": run_id,
        "digest": cfg.digest(),
        "wall_seconds": run.wall_seconds,
        "config": cfg,
    });
    fs::write(
        out_dir.join("configs").join(format!("{run_id}.json")),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}
