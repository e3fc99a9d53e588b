//! Maneuver-conditioned probabilistic decoder.
//!
//! Two softmax heads over the fused feature give lateral (left/keep/right)
//! and longitudinal (normal/braking) class distributions. Each of the six
//! joint modes conditions an LSTM rollout that emits a bivariate Gaussian
//! per future step, with the previous step's mean fed back as the next
//! input.
//!
//! The rollout works in the same normalized units as every other network
//! input (meters x `INPUT_SCALE`); the Gaussian parameters convert to
//! meters only at the output boundary via `OUTPUT_SCALE`. Keeping the raw
//! heads at unit scale is what lets the optimizer reach highway-scale
//! displacements (tens of meters) within a small step budget.

use crate::config::DecoderConfig;
use crate::data::{mode_index, LateralManeuver, LongitudinalManeuver};
use crate::interaction::LstmCell;
use crate::numerics::{BoundParams, ParamSet, Real, SplitRng, Tape, Tensor};
use crate::{FUT_LEN, INPUT_SCALE};

/// Meters per normalized unit at the output boundary.
pub const OUTPUT_SCALE: f64 = 1.0 / INPUT_SCALE;

pub const SIGMA_FLOOR: f64 = 1e-3;
pub const SIGMA_CEIL: f64 = 1e3;
pub const RHO_SCALE: f64 = 0.999;

/// Joint one-hot width: 3 lateral classes then 2 longitudinal classes.
pub const ONE_HOT_WIDTH: usize = 5;

/// Trajectory columns: [mu_x, mu_y, sigma_x, sigma_y, rho].
pub const TRAJ_COLS: usize = 5;

#[derive(Clone, Debug)]
pub struct Decoder {
    pub f_width: usize,
    pub hidden: usize,
    pub feed_dim: usize,
    /// With conditioning off the decoder emits a single unconditioned mode
    /// and the maneuver heads are not registered.
    pub conditioned: bool,
    cell: LstmCell,
}

impl Decoder {
    pub fn from_config(cfg: &DecoderConfig, f_width: usize, conditioned: bool) -> Self {
        Decoder {
            f_width,
            hidden: cfg.hidden,
            feed_dim: cfg.feed_dim,
            conditioned,
            cell: LstmCell::new("dec.lstm", cfg.feed_dim, cfg.hidden),
        }
    }

    pub fn n_modes(&self) -> usize {
        if self.conditioned {
            LateralManeuver::ALL.len() * LongitudinalManeuver::ALL.len()
        } else {
            1
        }
    }

    fn one_hot_width(&self) -> usize {
        if self.conditioned {
            ONE_HOT_WIDTH
        } else {
            0
        }
    }

    pub fn register_params<S: Real>(&self, params: &mut ParamSet<S>, rng: &mut SplitRng) {
        if self.conditioned {
            params.add_linear("dec.man_lat", self.f_width, LateralManeuver::ALL.len(), rng);
            params.add_linear("dec.man_lon", self.f_width, LongitudinalManeuver::ALL.len(), rng);
        }
        params.add_linear("dec.init", self.f_width + self.one_hot_width(), 2 * self.hidden, rng);
        params.add_linear("dec.feed", 2, self.feed_dim, rng);
        self.cell.register_params(params, rng);
        params.add_linear("dec.out", self.hidden, TRAJ_COLS, rng);
    }

    fn softmax_vec<S: Real>(tape: &mut Tape<S>, logits: &Tensor<S>) -> Tensor<S> {
        let n = logits.len();
        let m = tape.reshape(logits, vec![1, n]);
        let p = tape.softmax_rows(&m);
        tape.reshape(&p, vec![n])
    }

    /// Class distributions for the two maneuver heads.
    pub fn maneuver_logits<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundParams<S>,
        f: &Tensor<S>,
    ) -> (Tensor<S>, Tensor<S>) {
        assert!(self.conditioned, "contract violation: maneuver heads disabled");
        let lat = tape.linear_vec(f, bound.get("dec.man_lat.w"), bound.get("dec.man_lat.b"));
        let lon = tape.linear_vec(f, bound.get("dec.man_lon.w"), bound.get("dec.man_lon.b"));
        (lat, lon)
    }

    /// (P_lat, P_lon) simplex vectors.
    pub fn maneuver_probs<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundParams<S>,
        f: &Tensor<S>,
    ) -> (Tensor<S>, Tensor<S>) {
        let (lat, lon) = self.maneuver_logits(tape, bound, f);
        (Self::softmax_vec(tape, &lat), Self::softmax_vec(tape, &lon))
    }

    /// Joint mode probabilities: outer product of the two simplices,
    /// flattened in `mode_index` order (lateral-major).
    pub fn mode_probs<S: Real>(
        &self,
        tape: &mut Tape<S>,
        p_lat: &Tensor<S>,
        p_lon: &Tensor<S>,
    ) -> Tensor<S> {
        let nl = p_lat.len();
        let nn = p_lon.len();
        let col = tape.reshape(p_lat, vec![nl, 1]);
        let row = tape.reshape(p_lon, vec![1, nn]);
        let outer = tape.matmul(&col, &row);
        tape.reshape(&outer, vec![nl * nn])
    }

    /// Rolls out one mode: a [FUT_LEN x 5] matrix of per-step Gaussian
    /// parameters in meters. `mode` must be `None` exactly when the decoder
    /// is unconditioned.
    pub fn decode_mode<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundParams<S>,
        f: &Tensor<S>,
        mode: Option<(LateralManeuver, LongitudinalManeuver)>,
    ) -> Tensor<S> {
        assert_eq!(
            f.shape(),
            [self.f_width],
            "contract violation: feature shape {:?}, expected [{}]",
            f.shape(),
            self.f_width
        );
        assert_eq!(
            mode.is_some(),
            self.conditioned,
            "contract violation: mode argument disagrees with conditioning"
        );
        let init_in = match mode {
            Some((lat, lon)) => {
                let mut hot = vec![S::zero(); ONE_HOT_WIDTH];
                hot[lat.index()] = S::one();
                hot[LateralManeuver::ALL.len() + lon.index()] = S::one();
                let hot = tape.constant(&Tensor::new(vec![ONE_HOT_WIDTH], hot));
                tape.concat(&[f, &hot], 0)
            }
            None => f.clone(),
        };
        let init = tape.linear_vec(&init_in, bound.get("dec.init.w"), bound.get("dec.init.b"));
        let h0 = tape.narrow(&init, 0, 0, self.hidden);
        let c0 = tape.narrow(&init, 0, self.hidden, self.hidden);
        let mut h = tape.reshape(&h0, vec![1, self.hidden]);
        let mut c = tape.reshape(&c0, vec![1, self.hidden]);

        // `prev` is the previous mean in normalized units, matching the
        // scale of every other LSTM input.
        let mut prev = tape.constant(&Tensor::zeros(vec![1, 2]));
        let mut rows = Vec::with_capacity(FUT_LEN);
        for _ in 0..FUT_LEN {
            let x = tape.linear(&prev, bound.get("dec.feed.w"), bound.get("dec.feed.b"));
            let (nh, nc) = self.cell.step(tape, bound, &x, &h, &c);
            h = nh;
            c = nc;
            let raw = tape.linear(&h, bound.get("dec.out.w"), bound.get("dec.out.b"));
            let mu_raw = tape.narrow(&raw, 1, 0, 2);
            let sig_raw = tape.narrow(&raw, 1, 2, 2);
            let rho_raw = tape.narrow(&raw, 1, 4, 1);
            let mu = tape.scale(&mu_raw, S::of(OUTPUT_SCALE));
            let sig = tape.exp(&sig_raw);
            let sig = tape.scale(&sig, S::of(OUTPUT_SCALE));
            let sig = tape.clamp(&sig, S::of(SIGMA_FLOOR), S::of(SIGMA_CEIL));
            let rho = tape.tanh(&rho_raw);
            let rho = tape.scale(&rho, S::of(RHO_SCALE));
            let row = tape.concat(&[&mu, &sig, &rho], 1);
            rows.push(tape.reshape(&row, vec![TRAJ_COLS]));
            prev = mu_raw;
        }
        let refs: Vec<&Tensor<S>> = rows.iter().collect();
        tape.stack_rows(&refs)
    }

    /// All modes in `mode_index` order (a single mode when unconditioned).
    pub fn decode_all_modes<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundParams<S>,
        f: &Tensor<S>,
    ) -> Vec<Tensor<S>> {
        if !self.conditioned {
            return vec![self.decode_mode(tape, bound, f, None)];
        }
        let mut out = vec![None; self.n_modes()];
        for lat in LateralManeuver::ALL {
            for lon in LongitudinalManeuver::ALL {
                out[mode_index(lat, lon)] = Some(self.decode_mode(tape, bound, f, Some((lat, lon))));
            }
        }
        out.into_iter().map(|t| t.unwrap()).collect()
    }
}
