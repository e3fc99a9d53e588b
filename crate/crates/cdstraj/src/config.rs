use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CdsError, Result};

/// Synthetic-data and windowing parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Number of synthetic scenes to generate.
    pub n_scenes: usize,
    /// Vehicles per synthetic scene (first one is the prediction target).
    pub agents_per_scene: usize,
    /// Window stride in frames when slicing tracks.
    pub stride: usize,
    /// Lateral neighbor radius in meters.
    pub radius_lat: f64,
    /// Longitudinal neighbor radius in meters.
    pub radius_lon: f64,
    /// Maximum neighbors kept per scenario (nearest first).
    pub n_max: usize,
    /// Standard deviation of position noise in meters.
    pub noise_sigma: f64,
    /// Fraction of agents that perform a lane change.
    pub lane_change_frac: f64,
    /// Fraction of agents that brake.
    pub brake_frac: f64,
    /// Lane width in meters; the lateral maneuver threshold is half of it.
    pub lane_width: f64,
    /// Initial speed range in m/s.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Scene fraction for the training split.
    pub train_frac: f64,
    /// Scene fraction for the validation split (remainder is test).
    pub val_frac: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_scenes: 2000,
            agents_per_scene: 4,
            stride: 1,
            radius_lat: 12.0,
            radius_lon: 90.0,
            n_max: 8,
            noise_sigma: 0.05,
            lane_change_frac: 0.25,
            brake_frac: 0.15,
            lane_width: 3.5,
            speed_min: 8.0,
            speed_max: 16.0,
            train_frac: 0.8,
            val_frac: 0.1,
        }
    }
}

/// How the ensemble of denoised neighbor futures is pooled before the
/// refinement layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    /// Mean over ensemble members (default; width independent of k).
    Mean,
    /// Concatenation of all members (width scales with k).
    Concat,
}

/// Denoising-diffusion branch parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    /// Number of diffusion steps.
    pub gamma: usize,
    /// Linear noise schedule endpoints (variance per step).
    pub beta_start: f64,
    pub beta_end: f64,
    /// Ensemble size (independent reverse chains).
    pub k: usize,
    /// Width of the history context vector fed to the noise predictor.
    pub d_ctx: usize,
    /// Per-frame embedding width inside the context encoder.
    pub ctx_embed: usize,
    /// Hidden width of the noise-predictor MLP (also the width of the
    /// confidence feature distilled from the ensemble).
    pub hidden: usize,
    /// Sinusoidal step-embedding width (must be even).
    pub step_embed: usize,
    /// Ensemble pooling mode.
    pub aggregate: Aggregate,
    /// Negative slope of LeakyReLU activations in this branch.
    pub leaky_slope: f64,
    /// Denoising-only warmup epochs before stage 1 (0 = joint training
    /// from the start).
    pub pretrain_epochs: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            gamma: 20,
            beta_start: 1e-4,
            beta_end: 0.05,
            k: 5,
            d_ctx: 64,
            ctx_embed: 32,
            hidden: 128,
            step_embed: 16,
            aggregate: Aggregate::Mean,
            leaky_slope: 0.1,
            pretrain_epochs: 0,
        }
    }
}

/// Spatio-temporal interaction encoder parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StConfig {
    /// Temporal feature width (LSTM hidden size); divisible by `heads`.
    pub d: usize,
    /// Attention heads in the spatial and cross-time layers.
    pub heads: usize,
    /// Per-frame state embedding width.
    pub d_emb: usize,
    /// Extra width granted to the fused feature: its total width is
    /// d + d_conf.
    pub d_conf: usize,
    /// Negative slope of LeakyReLU activations in this branch.
    pub leaky_slope: f64,
}

impl Default for StConfig {
    fn default() -> Self {
        Self { d: 64, heads: 4, d_emb: 32, d_conf: 64, leaky_slope: 0.1 }
    }
}

/// Maneuver-conditioned decoder parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// LSTM hidden size of each mode rollout.
    pub hidden: usize,
    /// Width of the linear map applied to the fed-back mean.
    pub feed_dim: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { hidden: 64, feed_dim: 16 }
    }
}

/// Two-stage training schedule and optimizer settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Epochs of MSE regression (stage 1).
    pub stage1_epochs: usize,
    /// Epochs of NLL calibration (stage 2).
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight of the maneuver cross-entropy loss.
    pub lambda_man: f64,
    /// Weight of the denoising loss.
    pub lambda_diff: f64,
    /// Master seed; the CDSTRAJ_SEED env var overrides it.
    pub seed: u64,
    /// Directory holding train/val/test JSONL splits.
    pub data_dir: String,
    /// Optional early stage switch: if set, stage 1 ends once validation MSE
    /// improves by less than 1% across this many epochs.
    pub plateau_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_epochs: 20,
            stage2_epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lambda_man: 1.0,
            lambda_diff: 1.0,
            seed: 42,
            data_dir: "data".to_string(),
            plateau_patience: None,
        }
    }
}

/// Full pipeline configuration. Every field has a documented default, so an
/// empty JSON object `{}` is a valid config.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub diffusion: DiffusionConfig,
    pub st: StConfig,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)
            .map_err(|e| CdsError::Config(format!("malformed config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CdsError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Rejects hyperparameters outside their documented domains.
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(CdsError::Config(msg));
        let d = &self.data;
        if d.n_scenes == 0 || d.agents_per_scene == 0 || d.stride == 0 || d.n_max == 0 {
            return err("n_scenes, agents_per_scene, stride, n_max must be positive".into());
        }
        if !(d.train_frac > 0.0 && d.val_frac > 0.0 && d.train_frac + d.val_frac < 1.0) {
            return err(format!(
                "split fractions train={} val={} must be positive and sum below 1",
                d.train_frac, d.val_frac
            ));
        }
        if !(d.radius_lat > 0.0 && d.radius_lon > 0.0 && d.lane_width > 0.0) {
            return err("radii and lane width must be positive".into());
        }
        if !(d.speed_min > 0.0 && d.speed_max > d.speed_min) {
            return err(format!("speed range [{}, {}) is invalid", d.speed_min, d.speed_max));
        }
        if !(0.0..=1.0).contains(&d.lane_change_frac)
            || !(0.0..=1.0).contains(&d.brake_frac)
            || d.lane_change_frac + d.brake_frac > 1.0
        {
            return err("maneuver fractions must lie in [0, 1] and sum to at most 1".into());
        }
        if d.noise_sigma < 0.0 {
            return err("noise_sigma must be non-negative".into());
        }
        let f = &self.diffusion;
        if f.gamma == 0 {
            return err("diffusion.gamma must be at least 1".into());
        }
        if !(f.beta_start > 0.0 && f.beta_start <= f.beta_end && f.beta_end < 1.0) {
            return err(format!(
                "noise schedule requires 0 < beta_start <= beta_end < 1, got [{}, {}]",
                f.beta_start, f.beta_end
            ));
        }
        if f.k == 0 || f.d_ctx == 0 || f.ctx_embed == 0 || f.hidden == 0 {
            return err("diffusion widths and k must be positive".into());
        }
        if f.step_embed == 0 || f.step_embed % 2 != 0 {
            return err(format!("diffusion.step_embed must be positive and even, got {}", f.step_embed));
        }
        let s = &self.st;
        if s.d == 0 || s.heads == 0 || s.d % s.heads != 0 {
            return err(format!("st.d {} must be a positive multiple of st.heads {}", s.d, s.heads));
        }
        if s.d_emb == 0 {
            return err("st.d_emb must be positive".into());
        }
        let dec = &self.decoder;
        if dec.hidden == 0 || dec.feed_dim == 0 {
            return err("decoder widths must be positive".into());
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return err("train.batch_size must be at least 1".into());
        }
        if !(t.lr > 0.0 && t.beta1 >= 0.0 && t.beta1 < 1.0 && t.beta2 >= 0.0 && t.beta2 < 1.0 && t.eps > 0.0) {
            return err("optimizer hyperparameters out of range".into());
        }
        if t.lambda_man < 0.0 || t.lambda_diff < 0.0 {
            return err("loss weights must be non-negative".into());
        }
        Ok(())
    }
}
