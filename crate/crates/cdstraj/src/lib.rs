//! Multi-modal vehicle trajectory prediction.
//!
//! The pipeline predicts 5 s of future motion (25 frames at 5 Hz) for a target
//! vehicle from 3 s of observed history (16 frames) of the target and up to 8
//! neighbors. Three stages cooperate:
//!
//! * a denoising-diffusion branch that samples an ensemble of neighbor future
//!   estimates and distills them into a confidence feature,
//! * a spatio-temporal interaction encoder (shared LSTM over time, cross-agent
//!   attention per timestamp, gated cross-time fusion),
//! * a maneuver-conditioned decoder emitting six bivariate-Gaussian trajectory
//!   modes (3 lateral x 2 longitudinal) with mode probabilities.
//!
//! Training runs in two stages (MSE regression, then NLL calibration) with
//! auxiliary maneuver-classification and denoising losses.
//!
//! The numerics core is generic over the scalar type via [`numerics::Real`];
//! the pipeline itself runs in `f64` (see the crate-root aliases below).

pub mod config;
pub mod data;
pub mod decoder;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod interaction;
pub mod model;
pub mod numerics;
#[cfg(test)]
pub(crate) mod testutil;
pub mod train;

pub use error::CdsError;

/// Default scalar type for the full pipeline.
pub type Scalar = f64;
/// Tensor specialized to the pipeline scalar.
pub type Tensor = numerics::Tensor<Scalar>;
/// Recording tape specialized to the pipeline scalar.
pub type Tape = numerics::Tape<Scalar>;
/// Parameter set specialized to the pipeline scalar.
pub type ParamSet = numerics::ParamSet<Scalar>;
/// Adam optimizer specialized to the pipeline scalar.
pub type Adam = numerics::Adam<Scalar>;

/// Fixed scaling applied to coordinate features entering any network input
/// (a constant diagonal reparameterization of the first layer: positions up
/// to ~90 m become O(1) activations). Outputs stay in meters.
pub const INPUT_SCALE: f64 = 0.1;

/// Observed history length in frames (3 s at 5 Hz).
pub const HIST_LEN: usize = 16;
/// Prediction horizon in frames (5 s at 5 Hz).
pub const FUT_LEN: usize = 25;
/// Frame period in seconds (5 Hz).
pub const FRAME_DT: f64 = 0.2;
