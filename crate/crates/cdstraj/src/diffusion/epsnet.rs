use crate::config::DiffusionConfig;
use crate::numerics::{BoundParams, ParamSet, Real, SplitRng, Tape, Tensor};
use crate::INPUT_SCALE;

/// Sinusoidal embedding of a (1-based) diffusion step index.
pub fn step_embedding(delta: usize, dim: usize) -> Vec<f64> {
    assert!(dim > 0 && dim % 2 == 0, "contract violation: step embedding width {dim} must be even");
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / dim as f64);
        let angle = delta as f64 * freq;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}

/// Noise-prediction MLP: flattened noisy units, a history context vector and
/// the step embedding go through two hidden LeakyReLU layers to an estimate
/// of the injected noise, one row per ensemble member.
#[derive(Clone, Debug)]
pub struct EpsilonNet {
    pub unit_width: usize,
    pub d_ctx: usize,
    pub step_embed: usize,
    pub hidden: usize,
    pub slope: f64,
}

impl EpsilonNet {
    pub fn from_config(cfg: &DiffusionConfig, unit_width: usize) -> Self {
        Self {
            unit_width,
            d_ctx: cfg.d_ctx,
            step_embed: cfg.step_embed,
            hidden: cfg.hidden,
            slope: cfg.leaky_slope,
        }
    }

    pub fn in_width(&self) -> usize {
        self.unit_width + self.d_ctx + self.step_embed
    }

    pub fn register_params<S: Real>(&self, params: &mut ParamSet<S>, rng: &mut SplitRng) {
        params.add_linear("eps.l1", self.in_width(), self.hidden, rng);
        params.add_linear("eps.l2", self.hidden, self.hidden, rng);
        params.add_linear("eps.l3", self.hidden, self.unit_width, rng);
    }

    /// units: [k x unit_width] (meters); ctx: [d_ctx]; returns [k x unit_width].
    pub fn forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundParams<S>,
        units: &Tensor<S>,
        ctx: &Tensor<S>,
        delta: usize,
    ) -> Tensor<S> {
        assert_eq!(
            units.shape()[1],
            self.unit_width,
            "contract violation: unit width {:?} vs {}",
            units.shape(),
            self.unit_width
        );
        assert_eq!(ctx.shape(), [self.d_ctx], "contract violation: ctx shape {:?}", ctx.shape());
        let k = units.shape()[0];
        let scaled = tape.scale(units, S::of(INPUT_SCALE));
        let ctx_rows: Vec<&Tensor<S>> = std::iter::repeat(ctx).take(k).collect();
        let ctx_tile = tape.stack_rows(&ctx_rows);
        let emb = Tensor::from_f64(vec![self.step_embed], &step_embedding(delta, self.step_embed));
        let emb = tape.constant(&emb);
        let emb_rows: Vec<&Tensor<S>> = std::iter::repeat(&emb).take(k).collect();
        let emb_tile = tape.stack_rows(&emb_rows);
        let x = tape.concat(&[&scaled, &ctx_tile, &emb_tile], 1);
        let slope = S::of(self.slope);
        let h = tape.linear(&x, bound.get("eps.l1.w"), bound.get("eps.l1.b"));
        let h = tape.leaky_relu(&h, slope);
        let h = tape.linear(&h, bound.get("eps.l2.w"), bound.get("eps.l2.b"));
        let h = tape.leaky_relu(&h, slope);
        tape.linear(&h, bound.get("eps.l3.w"), bound.get("eps.l3.b"))
    }
}
