use crate::numerics::{Real, Tape, Tensor};
use crate::FUT_LEN;

/// ln(2*pi), the per-step additive constant of the bivariate Gaussian NLL.
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Position regression: the plain sum over future steps of squared
/// coordinate errors (a sum, not a mean; batch averaging happens outside).
/// `traj` is [T x 5] (or [T x 2]); `truth` is [T x 2].
pub fn mse_trajectory<S: Real>(
    tape: &mut Tape<S>,
    traj: &Tensor<S>,
    truth: &Tensor<S>,
) -> Tensor<S> {
    let t = truth.shape()[0];
    assert_eq!(truth.shape()[1], 2, "contract violation: truth shape {:?}", truth.shape());
    assert_eq!(
        traj.shape()[0],
        t,
        "contract violation: {} prediction steps vs {t} truth steps",
        traj.shape()[0]
    );
    let mu = if traj.shape()[1] == 2 { traj.clone() } else { tape.narrow(traj, 1, 0, 2) };
    let d = tape.sub(&mu, truth);
    let sq = tape.mul(&d, &d);
    tape.sum(&sq)
}

/// Bivariate-Gaussian negative log-likelihood summed over steps:
/// per step, ln(2 pi sx sy sqrt(1-rho^2))
///         + [zx^2 + zy^2 - 2 rho zx zy] / (2 (1-rho^2)),
/// with zx = (x - mu_x)/sx. `traj` is [T x 5]: mu_x, mu_y, sx, sy, rho.
pub fn gaussian_nll<S: Real>(tape: &mut Tape<S>, traj: &Tensor<S>, truth: &Tensor<S>) -> Tensor<S> {
    let t = truth.shape()[0];
    assert_eq!(
        traj.shape(),
        [t, 5],
        "contract violation: gaussian track shape {:?}",
        traj.shape()
    );
    let mu = tape.narrow(traj, 1, 0, 2);
    let sig = tape.narrow(traj, 1, 2, 2);
    let rho = tape.narrow(traj, 1, 4, 1);

    let d = tape.sub(truth, &mu);
    let z = tape.div(&d, &sig);
    let zx = tape.narrow(&z, 1, 0, 1);
    let zy = tape.narrow(&z, 1, 1, 1);
    let zx2 = tape.mul(&zx, &zx);
    let zy2 = tape.mul(&zy, &zy);
    let zxzy = tape.mul(&zx, &zy);
    let cross = tape.mul(&zxzy, &rho);
    let cross = tape.scale(&cross, S::of(2.0));
    let sums = tape.add(&zx2, &zy2);
    let quad_num = tape.sub(&sums, &cross);

    let r2 = tape.mul(&rho, &rho);
    let neg_r2 = tape.neg(&r2);
    let omr = tape.shift(&neg_r2, S::one());
    let two_omr = tape.scale(&omr, S::of(2.0));
    let quad = tape.div(&quad_num, &two_omr);

    let ln_sig = tape.ln(&sig);
    let ln_omr = tape.ln(&omr);
    let half_ln_omr = tape.scale(&ln_omr, S::of(0.5));

    let a = tape.sum(&ln_sig);
    let b = tape.sum(&half_ln_omr);
    let c = tape.sum(&quad);
    let ab = tape.add(&a, &b);
    let total = tape.add(&ab, &c);
    tape.shift(&total, S::of(t as f64 * LN_2PI))
}

/// -ln p[label] under a softmax over `logits`.
pub fn cross_entropy<S: Real>(tape: &mut Tape<S>, logits: &Tensor<S>, label: usize) -> Tensor<S> {
    let n = logits.len();
    assert!(label < n, "contract violation: label {label} of {n} classes");
    let m = tape.reshape(logits, vec![1, n]);
    let p = tape.softmax_rows(&m);
    let lnp = tape.ln(&p);
    let pick = tape.narrow(&lnp, 1, label, 1);
    let s = tape.sum(&pick);
    tape.neg(&s)
}

/// Lateral plus longitudinal cross-entropy.
pub fn maneuver_ce<S: Real>(
    tape: &mut Tape<S>,
    lat_logits: &Tensor<S>,
    lat_label: usize,
    lon_logits: &Tensor<S>,
    lon_label: usize,
) -> Tensor<S> {
    let a = cross_entropy(tape, lat_logits, lat_label);
    let b = cross_entropy(tape, lon_logits, lon_label);
    tape.add(&a, &b)
}

/// Builds the [FUT_LEN x 2] ground-truth tensor for one scenario.
pub fn truth_tensor<S: Real>(tape: &mut Tape<S>, future: &[[f64; 2]]) -> Tensor<S> {
    assert_eq!(future.len(), FUT_LEN, "contract violation: future length {}", future.len());
    let mut data = Vec::with_capacity(FUT_LEN * 2);
    for p in future {
        data.push(S::of(p[0]));
        data.push(S::of(p[1]));
    }
    let t = Tensor::new(vec![FUT_LEN, 2], data);
    tape.constant(&t)
}
