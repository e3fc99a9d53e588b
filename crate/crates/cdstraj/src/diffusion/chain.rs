use super::epsnet::EpsilonNet;
use super::schedule::NoiseSchedule;
use crate::numerics::{BoundParams, Real, SplitRng, Tape, Tensor};

/// Closed-form forward marginal: C^delta = sqrt(ab) C^0 + sqrt(1-ab) eps.
pub fn forward_diffuse<S: Real>(
    tape: &mut Tape<S>,
    c0: &Tensor<S>,
    delta: usize,
    eps: &Tensor<S>,
    schedule: &NoiseSchedule,
) -> Tensor<S> {
    assert_eq!(
        c0.shape(),
        eps.shape(),
        "contract violation: noise shape {:?} vs data {:?}",
        eps.shape(),
        c0.shape()
    );
    let ab = schedule.alpha_bar(delta);
    let signal = tape.scale(c0, S::of(ab.sqrt()));
    let noise = tape.scale(eps, S::of((1.0 - ab).sqrt()));
    tape.add(&signal, &noise)
}

/// One forward step: C^delta = sqrt(a_delta) C^{delta-1} + sqrt(1-a_delta) eps.
/// Iterating this with fresh noise reproduces the closed-form marginal in
/// distribution.
pub fn step_diffuse<S: Real>(
    tape: &mut Tape<S>,
    c_prev: &Tensor<S>,
    delta: usize,
    eps: &Tensor<S>,
    schedule: &NoiseSchedule,
) -> Tensor<S> {
    assert_eq!(
        c_prev.shape(),
        eps.shape(),
        "contract violation: noise shape {:?} vs data {:?}",
        eps.shape(),
        c_prev.shape()
    );
    let a = schedule.alpha(delta);
    let signal = tape.scale(c_prev, S::of(a.sqrt()));
    let noise = tape.scale(eps, S::of((1.0 - a).sqrt()));
    tape.add(&signal, &noise)
}

/// One reverse step undoing forward step `delta_next` (the coefficients are
/// those of the step being undone):
///
///   C^delta = (C^{delta+1} - (1-a)/sqrt(1-ab) eps_hat) / sqrt(a)
///             + sqrt(1-a) z
///
/// `z` is `None` on the final step (no fresh noise at delta = 0).
pub fn denoise_step<S: Real>(
    tape: &mut Tape<S>,
    c_next: &Tensor<S>,
    eps_hat: &Tensor<S>,
    z: Option<&Tensor<S>>,
    delta_next: usize,
    schedule: &NoiseSchedule,
) -> Tensor<S> {
    assert_eq!(
        c_next.shape(),
        eps_hat.shape(),
        "contract violation: eps_hat shape {:?} vs state {:?}",
        eps_hat.shape(),
        c_next.shape()
    );
    let a = schedule.alpha(delta_next);
    let ab = schedule.alpha_bar(delta_next);
    let eps_coef = S::of((1.0 - a) / (1.0 - ab).sqrt());
    let inv_sqrt_a = S::of(1.0 / a.sqrt());
    let correction = tape.scale(eps_hat, eps_coef);
    let centered = tape.sub(c_next, &correction);
    let mean = tape.scale(&centered, inv_sqrt_a);
    match z {
        None => mean,
        Some(z) => {
            assert_eq!(
                z.shape(),
                c_next.shape(),
                "contract violation: z shape {:?} vs state {:?}",
                z.shape(),
                c_next.shape()
            );
            let noise = tape.scale(z, S::of((1.0 - a).sqrt()));
            tape.add(&mean, &noise)
        }
    }
}

/// Runs the full reverse chain for an ensemble of members.
///
/// Each member owns an RNG stream (its initial state and per-step noise come
/// from that stream only), so permuting the member list permutes the output
/// rows bit-exactly. Masked unit slots are zeroed at initialization and
/// after every noise-prediction call, which keeps them exactly zero through
/// the elementwise updates.
///
/// Returns a [k x unit_width] tensor of denoised units (meters).
pub fn reverse_chain<S: Real>(
    tape: &mut Tape<S>,
    schedule: &NoiseSchedule,
    net: &EpsilonNet,
    bound: &BoundParams<S>,
    ctx: &Tensor<S>,
    mask_row: &Tensor<S>,
    member_rngs: &mut [SplitRng],
) -> Tensor<S> {
    let k = member_rngs.len();
    assert!(k > 0, "contract violation: empty ensemble");
    let width = net.unit_width;
    assert_eq!(
        mask_row.shape(),
        [width],
        "contract violation: mask shape {:?} vs width {width}",
        mask_row.shape()
    );

    let draw_rows = |rngs: &mut [SplitRng], tag: &str, step: usize| -> Tensor<S> {
        let mut data = Vec::with_capacity(k * width);
        for rng in rngs.iter_mut() {
            let mut r = rng.split_str(tag).split(step as u64);
            for _ in 0..width {
                data.push(S::of(r.standard_normal()));
            }
        }
        Tensor::new(vec![k, width], data)
    };

    let init = draw_rows(member_rngs, "init", 0);
    let init = tape.constant(&init);
    let mask = tape.constant(mask_row);
    let mut c = tape.mul_row(&init, &mask);

    for delta_next in (1..=schedule.gamma()).rev() {
        let eps_hat = net.forward(tape, bound, &c, ctx, delta_next);
        let eps_hat = tape.mul_row(&eps_hat, &mask);
        if delta_next > 1 {
            let z = draw_rows(member_rngs, "z", delta_next);
            let z = tape.constant(&z);
            let z = tape.mul_row(&z, &mask);
            c = denoise_step(tape, &c, &eps_hat, Some(&z), delta_next, schedule);
        } else {
            c = denoise_step(tape, &c, &eps_hat, None, delta_next, schedule);
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DiffusionConfig;
    use crate::numerics::ParamSet;

    fn scalar_tensor(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn zero_noise_leaves_pure_signal_scaling() {
        let s = NoiseSchedule::linear(20, 1e-4, 0.05);
        let mut tape = Tape::new();
        let c0 = tape.constant(&scalar_tensor(2.0));
        let eps = tape.constant(&scalar_tensor(0.0));
        let out = forward_diffuse(&mut tape, &c0, 7, &eps, &s);
        assert!((out.item() - 2.0 * s.alpha_bar(7).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_signal_leaves_pure_noise_scaling() {
        let s = NoiseSchedule::linear(20, 1e-4, 0.05);
        let mut tape = Tape::new();
        let c0 = tape.constant(&scalar_tensor(0.0));
        let eps = tape.constant(&scalar_tensor(1.5));
        let out = forward_diffuse(&mut tape, &c0, 20, &eps, &s);
        assert!((out.item() - 1.5 * (1.0 - s.alpha_bar(20)).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn forward_marginal_matches_scalar_arithmetic_at_midpoint() {
        // Independent scalar evaluation of sqrt(ab)*1.0 + sqrt(1-ab)*0.5 at
        // delta = 10 under the default schedule.
        let (gamma, b1, bg) = (20usize, 1e-4, 0.05);
        let mut ab = 1.0;
        for i in 0..10 {
            ab *= 1.0 - (b1 + (bg - b1) * i as f64 / 19.0);
        }
        let expected = ab.sqrt() * 1.0 + (1.0 - ab).sqrt() * 0.5;

        let s = NoiseSchedule::linear(gamma, b1, bg);
        let mut tape = Tape::new();
        let c0 = tape.constant(&scalar_tensor(1.0));
        let eps = tape.constant(&scalar_tensor(0.5));
        let out = forward_diffuse(&mut tape, &c0, 10, &eps, &s);
        assert!((out.item() - expected).abs() < 1e-15, "got {} want {expected}", out.item());
    }

    #[test]
    fn one_step_schedule_makes_step_and_marginal_agree() {
        let s = NoiseSchedule::linear(1, 0.2, 0.2);
        let mut tape = Tape::new();
        let c0 = tape.constant(&scalar_tensor(1.25));
        let eps = tape.constant(&scalar_tensor(-0.75));
        let a = step_diffuse(&mut tape, &c0, 1, &eps, &s).item();
        let b = forward_diffuse(&mut tape, &c0, 1, &eps, &s).item();
        assert_eq!(a, b);
    }

    #[test]
    fn iterated_steps_match_the_marginal_law_in_distribution() {
        // Mean of the iterated chain tends to sqrt(ab) C0 and variance to
        // 1 - ab; checked within 3 Monte Carlo standard errors.
        let s = NoiseSchedule::linear(3, 0.1, 0.3);
        let c0 = 2.0;
        let n = 20_000usize;
        let mut rng = SplitRng::new(314);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let mut tape = Tape::new();
            let mut c = tape.constant(&scalar_tensor(c0));
            for delta in 1..=3 {
                let eps = tape.constant(&scalar_tensor(rng.standard_normal()));
                c = step_diffuse(&mut tape, &c, delta, &eps, &s);
            }
            let v = c.item();
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let ab = s.alpha_bar(3);
        let want_mean = ab.sqrt() * c0;
        let want_var = 1.0 - ab;
        let se_mean = (want_var / n as f64).sqrt();
        let se_var = want_var * (2.0 / n as f64).sqrt();
        assert!(
            (mean - want_mean).abs() < 3.0 * se_mean,
            "mean {mean} vs {want_mean} (se {se_mean})"
        );
        assert!((var - want_var).abs() < 3.0 * se_var, "var {var} vs {want_var} (se {se_var})");
    }

    #[test]
    fn denoise_step_matches_scalar_arithmetic() {
        // One-step schedule with beta = 0.1 gives alpha = alpha_bar = 0.9:
        // (1/sqrt(0.9)) * (1.0 - (0.1 / sqrt(0.1)) * 0.5) with no noise term.
        let s = NoiseSchedule::linear(1, 0.1, 0.1);
        let expected = (1.0 - (0.1 / 0.1f64.sqrt()) * 0.5) / 0.9f64.sqrt();
        let mut tape = Tape::new();
        let c = tape.constant(&scalar_tensor(1.0));
        let eps = tape.constant(&scalar_tensor(0.5));
        let out = denoise_step(&mut tape, &c, &eps, None, 1, &s);
        assert!((out.item() - expected).abs() < 1e-15);
        assert!((out.item() - 0.8874).abs() < 1e-3);
    }

    #[test]
    fn vanishing_beta_makes_denoise_an_identity() {
        let s = NoiseSchedule::linear(1, 1e-12, 1e-12);
        let mut tape = Tape::new();
        let c = tape.constant(&scalar_tensor(0.8));
        let eps = tape.constant(&scalar_tensor(0.3));
        let out = denoise_step(&mut tape, &c, &eps, None, 1, &s);
        assert!((out.item() - 0.8).abs() < 1e-6);
    }

    #[test]
    fn single_step_roundtrip_inverts_exactly() {
        // With gamma = 1 and eps_hat = eps, denoising the forward output
        // recovers the input exactly (algebraic identity).
        let s = NoiseSchedule::linear(1, 0.05, 0.05);
        let mut tape = Tape::<f64>::new();
        let mut rng = SplitRng::new(44);
        let c0 = tape.constant(&Tensor::randn(vec![4, 10], &mut rng));
        let eps = tape.constant(&Tensor::randn(vec![4, 10], &mut rng));
        let fwd = forward_diffuse(&mut tape, &c0, 1, &eps, &s);
        let back = denoise_step(&mut tape, &fwd, &eps, None, 1, &s);
        for (a, b) in back.data().iter().zip(c0.data()) {
            assert!((a - b).abs() <= 1e-12, "roundtrip error {}", (a - b).abs());
        }
    }

    fn chain_fixture(k: usize) -> (NoiseSchedule, EpsilonNet, ParamSet<f64>, Tensor<f64>, Tensor<f64>) {
        let cfg = DiffusionConfig {
            gamma: 5,
            d_ctx: 6,
            step_embed: 4,
            hidden: 8,
            ..DiffusionConfig::default()
        };
        let schedule = NoiseSchedule::linear(cfg.gamma, cfg.beta_start, cfg.beta_end);
        let net = EpsilonNet::from_config(&cfg, 10);
        let mut params = ParamSet::new();
        let mut rng = SplitRng::new(9);
        net.register_params(&mut params, &mut rng);
        let ctx = Tensor::randn(vec![6], &mut rng);
        let mut mask_data = vec![1.0; 10];
        for slot in &mut mask_data[5..] {
            *slot = 0.0;
        }
        let mask = Tensor::new(vec![10], mask_data);
        let _ = k;
        (schedule, net, params, ctx, mask)
    }

    #[test]
    fn chain_outputs_are_finite_and_masked_slots_stay_zero() {
        let (schedule, net, params, ctx, mask) = chain_fixture(3);
        let mut tape = Tape::new();
        let bound = tape.bind_frozen(&params);
        let ctx = tape.constant(&ctx);
        let root = SplitRng::new(77);
        let mut members: Vec<SplitRng> = (0..3).map(|i| root.split(i)).collect();
        let out = reverse_chain(&mut tape, &schedule, &net, &bound, &ctx, &mask, &mut members);
        assert_eq!(out.shape(), &[3, 10]);
        for row in 0..3 {
            for col in 5..10 {
                assert_eq!(out.at2(row, col), 0.0, "masked slot drifted");
            }
        }
        assert!(out.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn permuting_members_permutes_rows_bit_exactly() {
        let (schedule, net, params, ctx, mask) = chain_fixture(3);
        let root = SplitRng::new(123);
        let run = |order: &[u64]| -> Vec<u64> {
            let mut tape = Tape::new();
            let bound = tape.bind_frozen(&params);
            let ctx = tape.constant(&ctx);
            let mut members: Vec<SplitRng> = order.iter().map(|&i| root.split(i)).collect();
            reverse_chain(&mut tape, &schedule, &net, &bound, &ctx, &mask, &mut members)
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect()
        };
        let base = run(&[0, 1, 2]);
        let perm = run(&[2, 0, 1]);
        let w = 10;
        for (dst_row, src_row) in [(0usize, 2usize), (1, 0), (2, 1)] {
            assert_eq!(
                &perm[dst_row * w..(dst_row + 1) * w],
                &base[src_row * w..(src_row + 1) * w],
                "row {src_row} not preserved under permutation"
            );
        }
    }

    #[test]
    fn zero_predictor_chain_has_near_zero_mean() {
        // With eps_hat = 0 the chain is a linear combination of zero-mean
        // Gaussians; the empirical mean over 1000 members stays near zero.
        let (schedule, net, mut params, ctx, _) = chain_fixture(1);
        params.set("eps.l3.w", vec![0.0; 8 * 10]);
        let mask = Tensor::new(vec![10], vec![1.0; 10]);
        let mut tape = Tape::new();
        let bound = tape.bind_frozen(&params);
        let ctx = tape.constant(&ctx);
        let root = SplitRng::new(2025);
        let mut members: Vec<SplitRng> = (0..1000).map(|i| root.split(i)).collect();
        let out = reverse_chain(&mut tape, &schedule, &net, &bound, &ctx, &mask, &mut members);
        let mean: f64 = out.data().iter().sum::<f64>() / out.len() as f64;
        assert!(mean.abs() < 0.1, "ensemble mean {mean} too far from zero");
    }

    #[test]
    fn chain_is_deterministic_per_member_seed() {
        let (schedule, net, params, ctx, mask) = chain_fixture(2);
        let run = || -> Vec<u64> {
            let mut tape = Tape::new();
            let bound = tape.bind_frozen(&params);
            let ctx = tape.constant(&ctx);
            let root = SplitRng::new(5);
            let mut members: Vec<SplitRng> = (0..2).map(|i| root.split(i)).collect();
            reverse_chain(&mut tape, &schedule, &net, &bound, &ctx, &mask, &mut members)
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(run(), run());
    }
}
