//! Two-stage trainer: stage 1 regresses the label-matched mode under MSE,
//! stage 2 swaps MSE for the bivariate-Gaussian NLL; both stages add the
//! maneuver cross-entropy and the denoising loss with configurable weights.
//! An optional denoising-only warmup runs before stage 1.
//!
//! Per-example gradients within a batch are computed in parallel but summed
//! in a fixed order, so the whole run is a pure function of (seed, config,
//! dataset): metric logs and parameters reproduce bit-for-bit, including
//! across a checkpoint/resume boundary.

pub mod checkpoint;
pub mod losses;

use rayon::prelude::*;

use crate::config::Config;
use crate::data::{DatasetSplit, ScenarioWindow};
use crate::error::{CdsError, Result};
use crate::model::{Model, ModelFlags};
use crate::numerics::{Adam, Gradients, ParamSet, SplitRng, Tape};

pub use checkpoint::Checkpoint;
pub use losses::{cross_entropy, gaussian_nll, maneuver_ce, mse_trajectory, truth_tensor, LN_2PI};

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// 0 = denoising warmup, 1 = MSE stage, 2 = NLL stage.
    pub stage: usize,
    /// Mean composite training loss over the epoch (NaN for the epoch-0
    /// pre-training row, which only carries validation metrics).
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_nll: f64,
    /// NaN when maneuver conditioning is disabled.
    pub val_ce: f64,
}

pub const METRICS_HEADER: &str = "epoch,stage,train_loss,val_mse,val_nll,val_ce";

/// Renders the metric log as CSV with LF line endings.
pub fn metrics_csv(rows: &[EpochRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.stage, r.train_loss, r.val_mse, r.val_nll, r.val_ce
        ));
    }
    out
}

/// Final checkpoint plus the metric rows produced by this call (a fresh run
/// includes the epoch-0 row; a resumed run only appends its own epochs).
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub rows: Vec<EpochRow>,
}

struct TrainState {
    model: Model,
    cfg: Config,
    flags: ModelFlags,
    seed: u64,
    params: ParamSet<f64>,
    adam: Adam<f64>,
    done_epochs: usize,
    stage1_end: Option<usize>,
    stage1_val_mse: Vec<f64>,
}

impl TrainState {
    fn fresh(cfg: &Config, flags: ModelFlags) -> Self {
        let model = Model::new(cfg, flags.clone());
        let seed = cfg.train.seed;
        let params = model.init_params::<f64>(seed);
        let t = &cfg.train;
        let adam = Adam::new(t.lr, t.beta1, t.beta2, t.eps);
        let mut state = Self {
            model,
            cfg: cfg.clone(),
            flags,
            seed,
            params,
            adam,
            done_epochs: 0,
            stage1_end: None,
            stage1_val_mse: Vec::new(),
        };
        if cfg.train.stage1_epochs == 0 {
            state.stage1_end = Some(state.pretrain_epochs());
        }
        state
    }

    fn from_checkpoint(cp: Checkpoint) -> Self {
        let model = Model::new(&cp.config, cp.flags.clone());
        let t = &cp.config.train;
        let mut adam = Adam::new(t.lr, t.beta1, t.beta2, t.eps);
        if cp.adam_t > 0 {
            let moments = cp
                .adam_m
                .iter()
                .map(|(k, m)| (k.clone(), (m.clone(), cp.adam_v[k].clone())))
                .collect();
            adam.restore(cp.adam_t, moments);
        }
        let mut state = Self {
            model,
            cfg: cp.config,
            flags: cp.flags,
            seed: cp.seed,
            params: cp.params,
            adam,
            done_epochs: cp.epoch,
            stage1_end: cp.stage1_end,
            stage1_val_mse: cp.stage1_val_mse,
        };
        if state.cfg.train.stage1_epochs == 0 && state.stage1_end.is_none() {
            state.stage1_end = Some(state.pretrain_epochs());
        }
        state
    }

    /// Warmup epochs only make sense when the denoising branch exists.
    fn pretrain_epochs(&self) -> usize {
        if self.flags.diffusion { self.cfg.diffusion.pretrain_epochs } else { 0 }
    }

    /// Stage of the next epoch, or None once the schedule is exhausted.
    fn next_stage(&self) -> Option<usize> {
        let e = self.done_epochs + 1;
        if e <= self.pretrain_epochs() {
            return Some(0);
        }
        match self.stage1_end {
            None => Some(1),
            Some(s1e) if e <= s1e + self.cfg.train.stage2_epochs => Some(2),
            Some(_) => None,
        }
    }

    fn stage_tag(&self) -> String {
        match self.next_stage() {
            Some(0) => "pretrain".into(),
            Some(1) => "stage1".into(),
            Some(2) => "stage2".into(),
            _ => "done".into(),
        }
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut adam_m = std::collections::BTreeMap::new();
        let mut adam_v = std::collections::BTreeMap::new();
        for (name, m, v) in self.adam.moments() {
            adam_m.insert(name.to_string(), m.to_vec());
            adam_v.insert(name.to_string(), v.to_vec());
        }
        Checkpoint {
            stage: self.stage_tag(),
            epoch: self.done_epochs,
            seed: self.seed,
            config: self.cfg.clone(),
            flags: self.flags.clone(),
            params: self.params.clone(),
            adam_t: self.adam.step_count(),
            adam_m,
            adam_v,
            stage1_end: self.stage1_end,
            stage1_val_mse: self.stage1_val_mse.clone(),
        }
    }
}

/// Composite loss and gradients for one scenario at the current parameters.
fn scene_grad(
    model: &Model,
    params: &ParamSet<f64>,
    w: &ScenarioWindow,
    rng: &SplitRng,
    stage: usize,
) -> (f64, Gradients<f64>) {
    let t = &model.cfg.train;
    let mut tape = Tape::new();
    let bound = tape.bind(params);
    let loss = if stage == 0 {
        match model.noise_matching_loss(&mut tape, &bound, w, rng) {
            Some(nl) => tape.scale(&nl, t.lambda_diff),
            None => return (0.0, Gradients::zeros_like(params)),
        }
    } else {
        let fwd = model.scene_forward(&mut tape, &bound, params, w, rng);
        let truth = truth_tensor(&mut tape, &w.target_future);
        let mut total = if stage == 1 {
            mse_trajectory(&mut tape, &fwd.matched, &truth)
        } else {
            gaussian_nll(&mut tape, &fwd.matched, &truth)
        };
        if let (Some(lat), Some(lon)) = (&fwd.lat_logits, &fwd.lon_logits) {
            let ce = maneuver_ce(&mut tape, lat, w.lat_label.index(), lon, w.lon_label.index());
            let ce = tape.scale(&ce, t.lambda_man);
            total = tape.add(&total, &ce);
        }
        if let Some(nl) = &fwd.noise_loss {
            let nl = tape.scale(nl, t.lambda_diff);
            total = tape.add(&total, &nl);
        }
        total
    };
    let bp = tape.backward(&loss);
    (loss.item(), bound.gradients(&bp))
}

/// Per-scene validation losses: (mse, nll, ce-or-NaN).
fn scene_val(
    model: &Model,
    params: &ParamSet<f64>,
    w: &ScenarioWindow,
    rng: &SplitRng,
) -> (f64, f64, f64) {
    let mut tape = Tape::new();
    let bound = tape.bind_frozen(params);
    let fwd = model.scene_forward(&mut tape, &bound, params, w, rng);
    let truth = truth_tensor(&mut tape, &w.target_future);
    let mse = mse_trajectory(&mut tape, &fwd.matched, &truth).item();
    let nll = gaussian_nll(&mut tape, &fwd.matched, &truth).item();
    let ce = match (&fwd.lat_logits, &fwd.lon_logits) {
        (Some(lat), Some(lon)) => {
            maneuver_ce(&mut tape, lat, w.lat_label.index(), lon, w.lon_label.index()).item()
        }
        _ => f64::NAN,
    };
    (mse, nll, ce)
}

/// Mean validation metrics under the epoch-keyed evaluation streams.
fn validation_metrics(state: &TrainState, val: &[ScenarioWindow], epoch: usize) -> (f64, f64, f64) {
    if val.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let root = SplitRng::new(state.seed).split_str("val").split(epoch as u64);
    let per: Vec<(f64, f64, f64)> = val
        .par_iter()
        .enumerate()
        .map(|(i, w)| scene_val(&state.model, &state.params, w, &root.split(i as u64)))
        .collect();
    let n = per.len() as f64;
    let sum = per
        .iter()
        .fold((0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    (sum.0 / n, sum.1 / n, sum.2 / n)
}

fn shuffled_indices(n: usize, rng: &mut SplitRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below((i + 1) as u64) as usize;
        idx.swap(i, j);
    }
    idx
}

/// Runs one full training epoch; returns the mean composite loss.
fn run_epoch(state: &mut TrainState, train: &[ScenarioWindow], epoch: usize, stage: usize) -> f64 {
    let root = SplitRng::new(state.seed);
    let mut order_rng = root.split_str("order").split(epoch as u64);
    let order = shuffled_indices(train.len(), &mut order_rng);
    let scene_root = root.split_str("train").split(epoch as u64);
    let batch_size = state.cfg.train.batch_size;

    let mut loss_sum = 0.0;
    for batch in order.chunks(batch_size) {
        // Fan out over fixed sub-chunks, then fold partial sums in order:
        // the result is independent of the worker count.
        let partials: Vec<(f64, Gradients<f64>)> = batch
            .par_chunks(4)
            .map(|chunk| {
                let mut sum: Option<(f64, Gradients<f64>)> = None;
                for &idx in chunk {
                    // Keyed by dataset index, not shuffle position, so the
                    // stream survives reordering.
                    let rng = scene_root.split(idx as u64);
                    let (l, g) =
                        scene_grad(&state.model, &state.params, &train[idx], &rng, stage);
                    match &mut sum {
                        None => sum = Some((l, g)),
                        Some((ls, gs)) => {
                            *ls += l;
                            gs.add_assign(&g);
                        }
                    }
                }
                sum.expect("chunks are non-empty")
            })
            .collect();
        let mut it = partials.into_iter();
        let (mut batch_loss, mut grads) = it.next().expect("batches are non-empty");
        for (l, g) in it {
            batch_loss += l;
            grads.add_assign(&g);
        }
        grads.scale(1.0 / batch.len() as f64);
        state.adam.step(&mut state.params, &grads);
        loss_sum += batch_loss;
    }
    loss_sum / train.len() as f64
}

/// Advances the schedule until done (or `stop_after` completed epochs),
/// appending one metric row per epoch.
fn run_epochs(
    state: &mut TrainState,
    split: &DatasetSplit,
    stop_after: Option<usize>,
    rows: &mut Vec<EpochRow>,
) {
    loop {
        if let Some(stop) = stop_after {
            if state.done_epochs >= stop {
                return;
            }
        }
        let Some(stage) = state.next_stage() else { return };
        let epoch = state.done_epochs + 1;
        let train_loss = run_epoch(state, &split.train, epoch, stage);
        let (val_mse, val_nll, val_ce) = validation_metrics(state, &split.val, epoch);
        state.done_epochs = epoch;
        if stage == 1 {
            // NaN (empty validation split) can neither trigger the plateau
            // rule nor survive the JSON manifest, so it is not recorded.
            if val_mse.is_finite() {
                state.stage1_val_mse.push(val_mse);
            }
            let cap = state.pretrain_epochs() + state.cfg.train.stage1_epochs;
            let h = &state.stage1_val_mse;
            let plateaued = state.cfg.train.plateau_patience.is_some_and(|p| {
                h.len() > p && h[h.len() - 1] > 0.99 * h[h.len() - 1 - p]
            });
            if epoch == cap || plateaued {
                state.stage1_end = Some(epoch);
            }
        }
        let row = EpochRow { epoch, stage, train_loss, val_mse, val_nll, val_ce };
        trace_row(&row);
        rows.push(row);
    }
}

/// Progress line per epoch on stderr when CDSTRAJ_TRACE is set.
fn trace_row(r: &EpochRow) {
    if std::env::var_os("CDSTRAJ_TRACE").is_some() {
        eprintln!(
            "epoch {} stage {} train_loss {:.4} val_mse {:.4} val_nll {:.4} val_ce {:.4}",
            r.epoch, r.stage, r.train_loss, r.val_mse, r.val_nll, r.val_ce
        );
    }
}

fn check_split(split: &DatasetSplit) -> Result<()> {
    if split.train.is_empty() {
        return Err(CdsError::Config("training split is empty".into()));
    }
    Ok(())
}

/// Full two-stage run from freshly initialized parameters. The metric log
/// starts with an epoch-0 row holding pre-training validation metrics.
pub fn train_two_stage(cfg: &Config, flags: ModelFlags, split: &DatasetSplit) -> Result<TrainOutcome> {
    train_until(cfg, flags, split, None)
}

/// As [`train_two_stage`] but stops once `stop_after` epochs are complete;
/// used to produce mid-run checkpoints.
pub fn train_until(
    cfg: &Config,
    flags: ModelFlags,
    split: &DatasetSplit,
    stop_after: Option<usize>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_split(split)?;
    let mut state = TrainState::fresh(cfg, flags);
    let (val_mse, val_nll, val_ce) = validation_metrics(&state, &split.val, 0);
    let mut rows = vec![EpochRow {
        epoch: 0,
        stage: state.next_stage().unwrap_or(1),
        train_loss: f64::NAN,
        val_mse,
        val_nll,
        val_ce,
    }];
    run_epochs(&mut state, split, stop_after, &mut rows);
    Ok(TrainOutcome { checkpoint: state.checkpoint(), rows })
}

/// Continues a checkpointed run to completion. Bit-identical to the
/// uninterrupted run over the same (seed, config, dataset).
pub fn resume_training(cp: Checkpoint, split: &DatasetSplit) -> Result<TrainOutcome> {
    cp.config.validate()?;
    check_split(split)?;
    let mut state = TrainState::from_checkpoint(cp);
    let mut rows = Vec::new();
    run_epochs(&mut state, split, None, &mut rows);
    Ok(TrainOutcome { checkpoint: state.checkpoint(), rows })
}
