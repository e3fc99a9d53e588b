//! RMSE-by-horizon evaluation, kinematic reference predictors, the
//! six-configuration ablation harness, SVG plotting, and the CLI.

pub mod cli;
pub mod svg;

pub use cli::cli_main;
pub use svg::{emit_plot, render_plot};

use rayon::prelude::*;

use crate::config::Config;
use crate::data::{data_hash, split_hash, DatasetSplit, ScenarioWindow};
use crate::error::{CdsError, Result};
use crate::model::{Model, ModelFlags};
use crate::numerics::ParamSet;
use crate::train::{train_two_stage, EpochRow};
use crate::{FRAME_DT, FUT_LEN, HIST_LEN};

/// Prediction horizons in whole seconds (5 frames each at 5 Hz).
pub const HORIZONS_S: [usize; 5] = [1, 2, 3, 4, 5];

/// Displacement RMSE at each horizon for one predictor on one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizonReport {
    pub model: String,
    /// Meters at horizons 1..=5 s, each sampled at the closing frame.
    pub rmse_m: [f64; 5],
    pub n_samples: usize,
    pub dataset: String,
    pub data_hash: String,
}

/// RMSE at the closing frame of each horizon: for h seconds, frame 5h
/// (1-based) of the future, i.e. sqrt(mean of squared Euclidean error).
pub fn rmse_by_horizon(
    predictions: &[Vec<[f64; 2]>],
    truths: &[Vec<[f64; 2]>],
    model: &str,
    dataset: &str,
    data_hash: &str,
) -> Result<HorizonReport> {
    if predictions.is_empty() {
        return Err(CdsError::Config("evaluation set is empty".into()));
    }
    assert_eq!(
        predictions.len(),
        truths.len(),
        "contract violation: {} predictions vs {} truths",
        predictions.len(),
        truths.len()
    );
    let mut rmse_m = [0.0; 5];
    for (slot, h) in rmse_m.iter_mut().zip(HORIZONS_S) {
        let frame = 5 * h - 1;
        let mut sq_sum = 0.0;
        for (p, y) in predictions.iter().zip(truths) {
            assert_eq!(p.len(), FUT_LEN, "contract violation: prediction length {}", p.len());
            assert_eq!(y.len(), FUT_LEN, "contract violation: truth length {}", y.len());
            let (dx, dy) = (p[frame][0] - y[frame][0], p[frame][1] - y[frame][1]);
            sq_sum += dx * dx + dy * dy;
        }
        *slot = (sq_sum / predictions.len() as f64).sqrt();
    }
    Ok(HorizonReport {
        model: model.to_string(),
        rmse_m,
        n_samples: predictions.len(),
        dataset: dataset.to_string(),
        data_hash: data_hash.to_string(),
    })
}

/// Mean trajectory of the highest-probability mode.
pub fn model_prediction(
    model: &Model,
    params: &ParamSet<f64>,
    w: &ScenarioWindow,
    seed: u64,
) -> Vec<[f64; 2]> {
    let pred = model.predict(params, w, seed);
    pred.modes[pred.best_mode()].iter().map(|row| [row[0], row[1]]).collect()
}

/// Holds the last observed position for the whole horizon.
pub fn zero_velocity_prediction(w: &ScenarioWindow) -> Vec<[f64; 2]> {
    let last = w.target_history[HIST_LEN - 1];
    vec![last; FUT_LEN]
}

/// Extrapolates the last observed velocity linearly.
pub fn const_velocity_prediction(w: &ScenarioWindow) -> Vec<[f64; 2]> {
    let last = w.target_history[HIST_LEN - 1];
    let prev = w.target_history[HIST_LEN - 2];
    let v = [(last[0] - prev[0]) / FRAME_DT, (last[1] - prev[1]) / FRAME_DT];
    (1..=FUT_LEN)
        .map(|t| {
            let dt = t as f64 * FRAME_DT;
            [last[0] + v[0] * dt, last[1] + v[1] * dt]
        })
        .collect()
}

fn window_truths(windows: &[ScenarioWindow]) -> Vec<Vec<[f64; 2]>> {
    windows.iter().map(|w| w.target_future.clone()).collect()
}

/// Reports for the trained model plus the two kinematic references, all on
/// the same windows (identical sample sets and data hash).
pub fn evaluate_windows(
    model: &Model,
    params: &ParamSet<f64>,
    windows: &[ScenarioWindow],
    dataset: &str,
    model_tag: &str,
    seed: u64,
) -> Result<Vec<HorizonReport>> {
    if windows.is_empty() {
        return Err(CdsError::Config("evaluation set is empty".into()));
    }
    let hash = data_hash(windows);
    let preds: Vec<Vec<[f64; 2]>> =
        windows.par_iter().map(|w| model_prediction(model, params, w, seed)).collect();
    let zv: Vec<Vec<[f64; 2]>> = windows.iter().map(zero_velocity_prediction).collect();
    let cv: Vec<Vec<[f64; 2]>> = windows.iter().map(const_velocity_prediction).collect();
    let truths = window_truths(windows);
    Ok(vec![
        rmse_by_horizon(&preds, &truths, model_tag, dataset, &hash)?,
        rmse_by_horizon(&zv, &truths, "zero_velocity", dataset, &hash)?,
        rmse_by_horizon(&cv, &truths, "const_velocity", dataset, &hash)?,
    ])
}

/// Renders reports as the schema-locked CSV. The header comment records the
/// closing-frame convention.
pub fn report_csv(reports: &[HorizonReport]) -> String {
    let mut out = String::from(
        "# rmse_m samples the closing frame of each horizon (frame 5h at 5 Hz)\n\
         model,horizon_s,rmse_m,n_samples,dataset,data_hash\n",
    );
    for r in reports {
        for (i, h) in HORIZONS_S.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.model, h, r.rmse_m[i], r.n_samples, r.dataset, r.data_hash
            ));
        }
    }
    out
}

/// One trained-and-evaluated ablation configuration.
pub struct AblationOutcome {
    pub tag: char,
    /// RMSE of the trained model on the validation split.
    pub report: HorizonReport,
    /// Validation MSE at the final epoch (the directional comparison metric).
    pub final_val_mse: f64,
    /// Full metric log of the training run.
    pub rows: Vec<EpochRow>,
}

/// Trains and evaluates configurations A-F with the same seed, budget, and
/// dataset; every report row carries the hash of the shared split.
pub fn ablation_run(cfg: &Config, split: &DatasetSplit) -> Result<Vec<AblationOutcome>> {
    let shared_hash = split_hash(split);
    let mut out = Vec::with_capacity(ModelFlags::TAGS.len());
    for tag in ModelFlags::TAGS {
        let flags = ModelFlags::ablation(tag);
        let trained = train_two_stage(cfg, flags, split)?;
        let model = Model::new(cfg, flags);
        let preds: Vec<Vec<[f64; 2]>> = split
            .val
            .par_iter()
            .map(|w| model_prediction(&model, &trained.checkpoint.params, w, cfg.train.seed))
            .collect();
        let truths = window_truths(&split.val);
        let report =
            rmse_by_horizon(&preds, &truths, &tag.to_string(), "val", &shared_hash)?;
        let final_val_mse = trained.rows.last().expect("at least the epoch-0 row").val_mse;
        out.push(AblationOutcome { tag, report, final_val_mse, rows: trained.rows });
    }
    Ok(out)
}

/// Fraction of held-out scenes whose joint maneuver argmax matches the label.
pub fn maneuver_accuracy(
    model: &Model,
    params: &ParamSet<f64>,
    windows: &[ScenarioWindow],
    seed: u64,
) -> f64 {
    assert!(!windows.is_empty(), "contract violation: empty accuracy set");
    let hits: usize = windows
        .par_iter()
        .map(|w| {
            let pred = model.predict(params, w, seed);
            usize::from(pred.best_mode() == model.label_mode(w))
        })
        .sum();
    hits as f64 / windows.len() as f64
}
