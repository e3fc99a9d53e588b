use crate::config::DiffusionConfig;
use crate::numerics::{BoundParams, ParamSet, Real, SplitRng, Tape, Tensor};
use crate::{HIST_LEN, INPUT_SCALE};

/// Encodes observed histories (target plus present neighbors) into one
/// context vector conditioning the noise predictor: per-frame linear
/// embedding, single-head self-attention over time per agent, mean pooling
/// over time and agents, and a final linear map to `d_ctx`.
#[derive(Clone, Debug)]
pub struct ContextEncoder {
    pub embed: usize,
    pub d_ctx: usize,
}

impl ContextEncoder {
    pub fn from_config(cfg: &DiffusionConfig) -> Self {
        Self { embed: cfg.ctx_embed, d_ctx: cfg.d_ctx }
    }

    pub fn register_params<S: Real>(&self, params: &mut ParamSet<S>, rng: &mut SplitRng) {
        params.add_linear("ctx.embed", 2, self.embed, rng);
        params.add_uniform("ctx.attn.wq", vec![self.embed, self.embed], self.embed, rng);
        params.add_uniform("ctx.attn.wk", vec![self.embed, self.embed], self.embed, rng);
        params.add_uniform("ctx.attn.wv", vec![self.embed, self.embed], self.embed, rng);
        params.add_linear("ctx.out", self.embed, self.d_ctx, rng);
    }

    /// histories: one [HIST_LEN x 2] tensor per present agent (target first).
    pub fn forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundParams<S>,
        histories: &[Tensor<S>],
    ) -> Tensor<S> {
        assert!(!histories.is_empty(), "contract violation: context needs at least the target");
        let inv_sqrt = S::of(1.0 / (self.embed as f64).sqrt());
        let mut pooled_rows = Vec::with_capacity(histories.len());
        for hist in histories {
            assert_eq!(
                hist.shape(),
                [HIST_LEN, 2],
                "contract violation: history shape {:?}",
                hist.shape()
            );
            let x = tape.scale(hist, S::of(INPUT_SCALE));
            let e = tape.linear(&x, bound.get("ctx.embed.w"), bound.get("ctx.embed.b"));
            let q = tape.matmul(&e, bound.get("ctx.attn.wq"));
            let k = tape.matmul(&e, bound.get("ctx.attn.wk"));
            let v = tape.matmul(&e, bound.get("ctx.attn.wv"));
            let scores = tape.matmul_abt(&q, &k);
            let scores = tape.scale(&scores, inv_sqrt);
            let attn = tape.softmax_rows(&scores);
            let o = tape.matmul(&attn, &v);
            pooled_rows.push(tape.mean_rows(&o));
        }
        let refs: Vec<&Tensor<S>> = pooled_rows.iter().collect();
        let stacked = tape.stack_rows(&refs);
        let pooled = tape.mean_rows(&stacked);
        tape.linear_vec(&pooled, bound.get("ctx.out.w"), bound.get("ctx.out.b"))
    }
}
