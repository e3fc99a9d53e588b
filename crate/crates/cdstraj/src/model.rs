//! Full pipeline assembly: diffusion branch, interaction encoder, and
//! decoder wired over one scenario.
//!
//! The reverse sampling chain runs on a detached scratch tape (sampling is
//! treated as data generation, not a differentiable path); its output units
//! re-enter the training tape as constants. The aggregator, encoder, and
//! decoder therefore train through the supervised losses while the noise
//! predictor and context encoder train through the noise-matching loss.

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::{mode_index, ScenarioWindow};
use crate::decoder::{Decoder, TRAJ_COLS};
use crate::diffusion::{
    forward_diffuse, masked_noise_loss, reverse_chain, ContextEncoder, EnsembleAggregator,
    EpsilonNet, NoiseSchedule,
};
use crate::interaction::{StEncoder, StStages};
use crate::numerics::{BoundParams, Real, SplitRng, Tape, Tensor};
use crate::{FUT_LEN, HIST_LEN};

/// Component toggles for the ablation grid. `full()` enables everything;
/// each named ablation disables exactly one component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFlags {
    pub diffusion: bool,
    pub temporal: bool,
    pub spatial: bool,
    pub fusion: bool,
    pub conditioning: bool,
}

impl Default for ModelFlags {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelFlags {
    pub fn full() -> Self {
        ModelFlags { diffusion: true, temporal: true, spatial: true, fusion: true, conditioning: true }
    }

    /// The six ablation rows: A no diffusion, B no temporal encoder, C no
    /// spatial attention, D no cross-time fusion, E no maneuver
    /// conditioning, F full model.
    pub fn ablation(tag: char) -> Self {
        let mut f = Self::full();
        match tag {
            'A' => f.diffusion = false,
            'B' => f.temporal = false,
            'C' => f.spatial = false,
            'D' => f.fusion = false,
            'E' => f.conditioning = false,
            'F' => {}
            other => panic!("contract violation: unknown ablation tag {other:?}"),
        }
        f
    }

    pub const TAGS: [char; 6] = ['A', 'B', 'C', 'D', 'E', 'F'];

    fn stages(&self) -> StStages {
        StStages { temporal: self.temporal, spatial: self.spatial, fusion: self.fusion }
    }
}

/// Inference output: per-mode Gaussian tracks (meters, target frame) plus
/// the joint mode distribution.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// One [FUT_LEN x 5] track per mode: mu_x, mu_y, sigma_x, sigma_y, rho.
    pub modes: Vec<Vec<[f64; TRAJ_COLS]>>,
    /// Simplex over modes, `mode_index` order; `[1.0]` when unconditioned.
    pub mode_probs: Vec<f64>,
    pub p_lat: Vec<f64>,
    pub p_lon: Vec<f64>,
}

impl Prediction {
    pub fn best_mode(&self) -> usize {
        self.mode_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("contract violation: NaN probability"))
            .expect("contract violation: no modes")
            .0
    }
}

/// Differentiable per-scene pass used by the trainer.
pub struct SceneForward<S> {
    /// Label-matched mode rollout [FUT_LEN x 5].
    pub matched: Tensor<S>,
    pub lat_logits: Option<Tensor<S>>,
    pub lon_logits: Option<Tensor<S>>,
    /// Noise-matching loss; absent without live neighbors or with the
    /// diffusion branch disabled.
    pub noise_loss: Option<Tensor<S>>,
}

pub struct Model {
    pub cfg: Config,
    pub flags: ModelFlags,
    pub schedule: NoiseSchedule,
    pub ctx: ContextEncoder,
    pub eps: EpsilonNet,
    pub agg: EnsembleAggregator,
    pub st: StEncoder,
    pub dec: Decoder,
    /// Width of one flattened neighbor-future unit: n_max * FUT_LEN * 2.
    pub unit_width: usize,
}

impl Model {
    pub fn new(cfg: &Config, flags: ModelFlags) -> Self {
        let unit_width = cfg.data.n_max * FUT_LEN * 2;
        let st = StEncoder::from_config(&cfg.st, cfg.diffusion.hidden, flags.stages());
        let dec = Decoder::from_config(&cfg.decoder, st.f_width(), flags.conditioning);
        Model {
            cfg: cfg.clone(),
            flags,
            schedule: NoiseSchedule::linear(
                cfg.diffusion.gamma,
                cfg.diffusion.beta_start,
                cfg.diffusion.beta_end,
            ),
            ctx: ContextEncoder::from_config(&cfg.diffusion),
            eps: EpsilonNet::from_config(&cfg.diffusion, unit_width),
            agg: EnsembleAggregator::from_config(&cfg.diffusion, unit_width),
            st,
            dec,
            unit_width,
        }
    }

    /// Fresh parameters. Each submodule draws from its own named stream, so
    /// shared modules initialize identically across ablation variants.
    pub fn init_params<S: Real>(&self, seed: u64) -> crate::numerics::ParamSet<S> {
        let root = SplitRng::new(seed).split_str("init");
        let mut params = crate::numerics::ParamSet::new();
        if self.flags.diffusion {
            self.ctx.register_params(&mut params, &mut root.split_str("ctx"));
            self.eps.register_params(&mut params, &mut root.split_str("eps"));
            self.agg.register_params(&mut params, &mut root.split_str("agg"));
        }
        self.st.register_params(&mut params, &mut root.split_str("st"));
        self.dec.register_params(&mut params, &mut root.split_str("dec"));
        params
    }

    /// Observed histories as tape constants, target first.
    fn history_tensors<S: Real>(&self, tape: &mut Tape<S>, w: &ScenarioWindow) -> Vec<Tensor<S>> {
        let mut out = Vec::with_capacity(1 + w.n_neighbors());
        let to_tensor = |tape: &mut Tape<S>, traj: &[[f64; 2]]| {
            let mut data = Vec::with_capacity(HIST_LEN * 2);
            for p in traj {
                data.push(S::of(p[0]));
                data.push(S::of(p[1]));
            }
            let t = Tensor::new(vec![HIST_LEN, 2], data);
            tape.constant(&t)
        };
        out.push(to_tensor(tape, &w.target_history));
        for h in &w.neighbor_histories {
            out.push(to_tensor(tape, h));
        }
        out
    }

    /// Flattens neighbor futures into one fixed-width unit row plus its
    /// live-slot mask (both plain tensors; callers intern them as needed).
    pub fn neighbor_unit(&self, w: &ScenarioWindow) -> (Tensor<f64>, Tensor<f64>) {
        assert_eq!(
            w.n_max, self.cfg.data.n_max,
            "contract violation: window capacity {} vs model {}",
            w.n_max, self.cfg.data.n_max
        );
        let mut values = vec![0.0; self.unit_width];
        let mut mask = vec![0.0; self.unit_width];
        let slot = FUT_LEN * 2;
        for (i, fut) in w.neighbor_futures.iter().enumerate() {
            for (t, p) in fut.iter().enumerate() {
                values[i * slot + 2 * t] = p[0];
                values[i * slot + 2 * t + 1] = p[1];
            }
            for v in &mut mask[i * slot..(i + 1) * slot] {
                *v = 1.0;
            }
        }
        (Tensor::new(vec![self.unit_width], values), Tensor::new(vec![self.unit_width], mask))
    }

    /// Runs the K-member reverse chain detached from any training tape and
    /// returns the sampled units as plain data.
    fn sample_units<S: Real>(
        &self,
        params: &crate::numerics::ParamSet<S>,
        histories_raw: &ScenarioWindow,
        mask_row: &Tensor<S>,
        rng: &SplitRng,
    ) -> Tensor<S> {
        let mut scratch = Tape::new();
        let bound = scratch.bind_frozen(params);
        let hists = self.history_tensors(&mut scratch, histories_raw);
        let ctx = self.ctx.forward(&mut scratch, &bound, &hists);
        let chain_rng = rng.split_str("chain");
        let mut members: Vec<SplitRng> =
            (0..self.cfg.diffusion.k as u64).map(|m| chain_rng.split(m)).collect();
        let units = reverse_chain(
            &mut scratch,
            &self.schedule,
            &self.eps,
            &bound,
            &ctx,
            mask_row,
            &mut members,
        );
        units.detach()
    }

    fn mask_vec<S: Real>(&self, mask: &Tensor<f64>) -> Tensor<S> {
        let data: Vec<S> = mask.data().iter().map(|v| S::of(*v)).collect();
        Tensor::new(vec![self.unit_width], data)
    }

    /// Confidence vector on `tape`: chain sampled off-tape, aggregator on.
    pub(crate) fn confidence<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundParams<S>,
        params: &crate::numerics::ParamSet<S>,
        w: &ScenarioWindow,
        rng: &SplitRng,
    ) -> Tensor<S> {
        let (_, mask) = self.neighbor_unit(w);
        let mask_row = self.mask_vec::<S>(&mask);
        let units = self.sample_units(params, w, &mask_row, rng);
        let units = tape.constant(&units);
        let (conf, _) = self.agg.forward(tape, bound, &units);
        conf
    }

    /// Noise-matching loss for one scene: one uniform step draw, one masked
    /// standard-normal draw. `None` without live neighbors.
    pub fn noise_matching_loss<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundParams<S>,
        w: &ScenarioWindow,
        rng: &SplitRng,
    ) -> Option<Tensor<S>> {
        if w.n_neighbors() == 0 {
            return None;
        }
        let hists = self.history_tensors(tape, w);
        let ctx = self.ctx.forward(tape, bound, &hists);
        let (unit, mask) = self.neighbor_unit(w);
        let mut draw = rng.split_str("noise");
        let delta = 1 + draw.below(self.schedule.gamma() as u64) as usize;
        let mut eps_data = vec![S::zero(); self.unit_width];
        for (e, m) in eps_data.iter_mut().zip(mask.data()) {
            if *m != 0.0 {
                *e = S::of(draw.standard_normal());
            }
        }
        let c0_data: Vec<S> = unit.data().iter().map(|v| S::of(*v)).collect();
        let c0 = tape.constant(&Tensor::new(vec![1, self.unit_width], c0_data));
        let eps = tape.constant(&Tensor::new(vec![1, self.unit_width], eps_data));
        let diffused = forward_diffuse(tape, &c0, delta, &eps, &self.schedule);
        let eps_hat = self.eps.forward(tape, bound, &diffused, &ctx, delta);
        let mask_row = self.mask_vec::<S>(&mask);
        Some(masked_noise_loss(tape, &eps_hat, &eps, &mask_row))
    }

    /// Differentiable pass for training: label-matched rollout, maneuver
    /// logits, and the per-scene noise loss.
    pub fn scene_forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundParams<S>,
        params: &crate::numerics::ParamSet<S>,
        w: &ScenarioWindow,
        rng: &SplitRng,
    ) -> SceneForward<S> {
        let conf = if self.flags.diffusion {
            Some(self.confidence(tape, bound, params, w, rng))
        } else {
            None
        };
        let hists = self.history_tensors(tape, w);
        let u = self.st.encode(tape, bound, &hists);
        let f = self.st.fuse_confidence(tape, bound, &u, conf.as_ref());

        let (matched, lat_logits, lon_logits) = if self.flags.conditioning {
            let (lat, lon) = self.dec.maneuver_logits(tape, bound, &f);
            let traj = self.dec.decode_mode(tape, bound, &f, Some((w.lat_label, w.lon_label)));
            (traj, Some(lat), Some(lon))
        } else {
            (self.dec.decode_mode(tape, bound, &f, None), None, None)
        };

        let noise_loss = if self.flags.diffusion {
            self.noise_matching_loss(tape, bound, w, rng)
        } else {
            None
        };

        SceneForward { matched, lat_logits, lon_logits, noise_loss }
    }

    /// Full inference: all modes plus the joint mode distribution.
    pub fn predict<S: Real>(
        &self,
        params: &crate::numerics::ParamSet<S>,
        w: &ScenarioWindow,
        seed: u64,
    ) -> Prediction {
        let rng = SplitRng::new(seed).split_str("predict").split(w.agent_id);
        let mut tape = Tape::new();
        let bound = tape.bind_frozen(params);
        let conf = if self.flags.diffusion {
            Some(self.confidence(&mut tape, &bound, params, w, &rng))
        } else {
            None
        };
        let hists = self.history_tensors(&mut tape, w);
        let u = self.st.encode(&mut tape, &bound, &hists);
        let f = self.st.fuse_confidence(&mut tape, &bound, &u, conf.as_ref());

        let (mode_probs, p_lat, p_lon) = if self.flags.conditioning {
            let (lat, lon) = self.dec.maneuver_probs(&mut tape, &bound, &f);
            let joint = self.dec.mode_probs(&mut tape, &lat, &lon);
            (
                joint.data().iter().map(|v| v.wide()).collect::<Vec<f64>>(),
                lat.data().iter().map(|v| v.wide()).collect(),
                lon.data().iter().map(|v| v.wide()).collect(),
            )
        } else {
            (vec![1.0], Vec::new(), Vec::new())
        };

        let modes = self
            .dec
            .decode_all_modes(&mut tape, &bound, &f)
            .into_iter()
            .map(|traj| {
                (0..FUT_LEN)
                    .map(|t| {
                        let mut row = [0.0; TRAJ_COLS];
                        for (j, slot) in row.iter_mut().enumerate() {
                            *slot = traj.at2(t, j).wide();
                        }
                        row
                    })
                    .collect()
            })
            .collect();

        Prediction { modes, mode_probs, p_lat, p_lon }
    }

    /// Index of the mode matching the scenario's ground-truth labels.
    pub fn label_mode(&self, w: &ScenarioWindow) -> usize {
        if self.flags.conditioning {
            mode_index(w.lat_label, w.lon_label)
        } else {
            0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_dataset;

    use crate::testutil::tiny_config;

    fn sample_windows(cfg: &Config) -> Vec<ScenarioWindow> {
        generate_dataset(&cfg.data, 7)
    }

    #[test]
    fn prediction_is_deterministic_and_valid() {
        let cfg = tiny_config();
        let model = Model::new(&cfg, ModelFlags::full());
        let params = model.init_params::<f64>(1);
        let w = &sample_windows(&cfg)[0];
        let a = model.predict(&params, w, 99);
        let b = model.predict(&params, w, 99);
        assert_eq!(a.mode_probs, b.mode_probs);
        assert_eq!(a.modes, b.modes);
        assert_eq!(a.modes.len(), 6);
        let total: f64 = a.mode_probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for mode in &a.modes {
            assert_eq!(mode.len(), FUT_LEN);
            for row in mode {
                assert!(row[2] > 0.0 && row[3] > 0.0 && row[4].abs() < 1.0);
            }
        }
    }

    #[test]
    fn unit_row_and_mask_cover_live_neighbors_only() {
        let cfg = tiny_config();
        let model = Model::new(&cfg, ModelFlags::full());
        let windows = sample_windows(&cfg);
        let w = windows.iter().find(|w| w.n_neighbors() >= 1).expect("a window with neighbors");
        let (unit, mask) = model.neighbor_unit(w);
        let slot = FUT_LEN * 2;
        let live = w.n_neighbors() * slot;
        assert!(mask.data()[..live].iter().all(|v| *v == 1.0));
        assert!(mask.data()[live..].iter().all(|v| *v == 0.0));
        assert!(unit.data()[live..].iter().all(|v| *v == 0.0));
        assert_eq!(unit.data()[1], w.neighbor_futures[0][0][1]);
    }

    #[test]
    fn ablation_variants_run_end_to_end() {
        let cfg = tiny_config();
        let windows = sample_windows(&cfg);
        let w = &windows[0];
        for tag in ModelFlags::TAGS {
            let flags = ModelFlags::ablation(tag);
            let model = Model::new(&cfg, flags);
            let params = model.init_params::<f64>(3);
            let pred = model.predict(&params, w, 5);
            let expected_modes = if tag == 'E' { 1 } else { 6 };
            assert_eq!(pred.modes.len(), expected_modes, "ablation {tag}");
            let total: f64 = pred.mode_probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diffusion_ablation_registers_no_diffusion_parameters() {
        let cfg = tiny_config();
        let model = Model::new(&cfg, ModelFlags::ablation('A'));
        let params = model.init_params::<f64>(1);
        assert!(params.names().iter().all(|n| {
            !n.starts_with("ctx.") && !n.starts_with("eps.") && !n.starts_with("agg.")
        }));
    }

    #[test]
    fn shared_modules_initialize_identically_across_ablations() {
        let cfg = tiny_config();
        let full = Model::new(&cfg, ModelFlags::full()).init_params::<f64>(11);
        let no_diff = Model::new(&cfg, ModelFlags::ablation('A')).init_params::<f64>(11);
        for name in no_diff.names() {
            assert_eq!(
                full.get(&name).data(),
                no_diff.get(&name).data(),
                "{name} differs across ablations"
            );
        }
    }

    #[test]
    fn scene_forward_produces_all_training_heads() {
        let cfg = tiny_config();
        let model = Model::new(&cfg, ModelFlags::full());
        let params = model.init_params::<f64>(2);
        let windows = sample_windows(&cfg);
        let w = windows.iter().find(|w| w.n_neighbors() >= 1).unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&params);
        let rng = SplitRng::new(3);
        let out = model.scene_forward(&mut tape, &bound, &params, w, &rng);
        assert_eq!(out.matched.shape(), &[FUT_LEN, TRAJ_COLS]);
        assert_eq!(out.lat_logits.as_ref().unwrap().shape(), &[3]);
        assert_eq!(out.lon_logits.as_ref().unwrap().shape(), &[2]);
        assert!(out.noise_loss.is_some());
        let nl = out.noise_loss.unwrap();
        assert!(nl.item() > 0.0 && nl.item().is_finite());
    }

    #[test]
    fn noise_loss_of_zero_predictor_is_near_one() {
        // With the output layer zeroed the predictor emits 0, so the loss
        // is the masked mean of squared standard normals; averaged over
        // many draws it concentrates near 1.
        let cfg = tiny_config();
        let model = Model::new(&cfg, ModelFlags::full());
        let mut params = model.init_params::<f64>(4);
        let zero = vec![0.0; params.get("eps.l3.w").len()];
        params.set("eps.l3.w", zero);
        params.set("eps.l3.b", vec![0.0; model.unit_width]);
        let windows = sample_windows(&cfg);
        let w = windows.iter().find(|w| w.n_neighbors() >= 1).unwrap();
        let root = SplitRng::new(9);
        let mut total = 0.0;
        let mut count = 0usize;
        // 10^4 masked slots in aggregate keep the Monte Carlo error small.
        let draws = 1 + 10_000 / (w.n_neighbors() * FUT_LEN * 2);
        for i in 0..draws as u64 {
            let mut tape = Tape::new();
            let bound = tape.bind_frozen(&params);
            let rng = root.split(i);
            let loss = model.noise_matching_loss(&mut tape, &bound, w, &rng).unwrap();
            total += loss.item();
            count += 1;
        }
        let mean = total / count as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean loss {mean}");
    }

    #[test]
    fn windows_without_neighbors_skip_the_noise_loss() {
        let mut cfg = tiny_config();
        cfg.data.agents_per_scene = 1;
        let model = Model::new(&cfg, ModelFlags::full());
        let params = model.init_params::<f64>(5);
        let windows = sample_windows(&cfg);
        assert!(windows.iter().all(|w| w.n_neighbors() == 0));
        let mut tape = Tape::new();
        let bound = tape.bind(&params);
        let rng = SplitRng::new(1);
        let out = model.scene_forward(&mut tape, &bound, &params, &windows[0], &rng);
        assert!(out.noise_loss.is_none());
    }
}
