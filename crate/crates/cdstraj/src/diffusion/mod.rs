//! Characterized diffusion over neighbor futures.
//!
//! A scene's neighbor futures are flattened into fixed-width "units"
//! (padded rows masked to zero). The forward process corrupts a unit toward
//! an isotropic Gaussian under a linear variance schedule; a small
//! conditioned MLP predicts the injected noise, and the reverse chain runs
//! an ensemble of denoised samples that an aggregator pools into a
//! confidence vector for the downstream predictor.

pub mod aggregate;
pub mod chain;
pub mod context;
pub mod epsnet;
pub mod schedule;

pub use aggregate::EnsembleAggregator;
pub use chain::{denoise_step, forward_diffuse, reverse_chain, step_diffuse};
pub use context::ContextEncoder;
pub use epsnet::{step_embedding, EpsilonNet};
pub use schedule::NoiseSchedule;

use crate::numerics::{Real, Tape, Tensor};

/// Mean squared noise-prediction error over live slots only.
///
/// `eps_hat` and `eps` are [rows x width]; `mask_row` is a 0/1 row of width
/// `width` with at least one live slot. Padded slots are zeroed before
/// squaring so they contribute nothing, and the sum is averaged over
/// `rows * live_slots`.
pub fn masked_noise_loss<S: Real>(
    tape: &mut Tape<S>,
    eps_hat: &Tensor<S>,
    eps: &Tensor<S>,
    mask_row: &Tensor<S>,
) -> Tensor<S> {
    assert_eq!(
        eps_hat.shape(),
        eps.shape(),
        "contract violation: prediction shape {:?} vs target {:?}",
        eps_hat.shape(),
        eps.shape()
    );
    let live = mask_row.data().iter().filter(|v| **v != S::zero()).count();
    assert!(live > 0, "contract violation: all-zero mask");
    let rows = eps_hat.shape()[0];
    let mask = tape.constant(mask_row);
    let diff = tape.sub(eps_hat, eps);
    let masked = tape.mul_row(&diff, &mask);
    let sq = tape.mul(&masked, &masked);
    let total = tape.sum(&sq);
    tape.scale(&total, S::of(1.0 / (rows * live) as f64))
}
