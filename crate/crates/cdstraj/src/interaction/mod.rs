//! Spatio-temporal interaction encoder.
//!
//! Histories (target first, then present neighbors; padded agents never
//! reach this module) pass through a per-frame embedding, a shared LSTM over
//! the 16 observed frames, per-frame attention across agents with the target
//! as the query, and a final self-attention across the 16 time positions.
//! Both attention stages end in a sigmoid-gated linear unit. The most recent
//! fused row combines with the diffusion confidence vector into the decoder
//! input `F`.

pub mod attention;
pub mod lstm;

pub use attention::{glu_gate, multi_head_attend};
pub use lstm::LstmCell;

use crate::config::StConfig;
use crate::numerics::{BoundParams, ParamSet, Real, SplitRng, Tape, Tensor};
use crate::{HIST_LEN, INPUT_SCALE};

/// Which encoder stages run; disabled stages are skipped with their
/// parameters unregistered, and the data flows through untouched.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StStages {
    pub temporal: bool,
    pub spatial: bool,
    pub fusion: bool,
}

impl Default for StStages {
    fn default() -> Self {
        StStages { temporal: true, spatial: true, fusion: true }
    }
}

#[derive(Clone, Debug)]
pub struct StEncoder {
    pub d: usize,
    pub heads: usize,
    pub d_conf: usize,
    /// Width of the incoming confidence vector (zeros of this width stand in
    /// when the diffusion branch is disabled).
    pub conf_width: usize,
    pub stages: StStages,
    slope: f64,
    emb_out: usize,
    cell: LstmCell,
}

impl StEncoder {
    pub fn from_config(cfg: &StConfig, conf_width: usize, stages: StStages) -> Self {
        assert!(
            cfg.d % cfg.heads == 0,
            "contract violation: d {} not divisible by heads {}",
            cfg.d,
            cfg.heads
        );
        // Without the recurrent stage the embedding itself must produce
        // d-wide rows for the attention stages to consume.
        let emb_out = if stages.temporal { cfg.d_emb } else { cfg.d };
        StEncoder {
            d: cfg.d,
            heads: cfg.heads,
            d_conf: cfg.d_conf,
            conf_width,
            stages,
            slope: cfg.leaky_slope,
            emb_out,
            cell: LstmCell::new("st.lstm", emb_out, cfg.d),
        }
    }

    /// Width of the fused decoder input F.
    pub fn f_width(&self) -> usize {
        self.d + self.d_conf
    }

    pub fn register_params<S: Real>(&self, params: &mut ParamSet<S>, rng: &mut SplitRng) {
        params.add_linear("st.emb", 2, self.emb_out, rng);
        if self.stages.temporal {
            self.cell.register_params(params, rng);
        }
        if self.stages.spatial {
            params.add_uniform("st.sp.wq", vec![self.d, self.d], self.d, rng);
            params.add_uniform("st.sp.wk", vec![self.d, self.d], self.d, rng);
            params.add_uniform("st.sp.wv", vec![self.d, self.d], self.d, rng);
            params.add_linear("st.sp.gate_a", self.d, self.d, rng);
            params.add_linear("st.sp.gate_g", self.d, self.d, rng);
        }
        if self.stages.fusion {
            params.add_uniform("st.fu.wq", vec![self.d, self.d], self.d, rng);
            params.add_uniform("st.fu.wk", vec![self.d, self.d], self.d, rng);
            params.add_uniform("st.fu.wv", vec![self.d, self.d], self.d, rng);
            params.add_linear("st.fu.gate_a", self.d, self.d, rng);
            params.add_linear("st.fu.gate_g", self.d, self.d, rng);
        }
        params.add_linear("st.fuse", self.d + self.conf_width, self.f_width(), rng);
    }

    /// Per-frame embedding of one agent history: LeakyReLU(linear(x)).
    fn embed<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundParams<S>,
        hist: &Tensor<S>,
    ) -> Tensor<S> {
        assert_eq!(
            hist.shape(),
            [HIST_LEN, 2],
            "contract violation: history shape {:?}",
            hist.shape()
        );
        let x = tape.scale(hist, S::of(INPUT_SCALE));
        let e = tape.linear(&x, bound.get("st.emb.w"), bound.get("st.emb.b"));
        tape.leaky_relu(&e, S::of(self.slope))
    }

    /// Encodes histories into the fused time matrix U [HIST_LEN x d].
    /// `histories[0]` is the target.
    pub fn encode<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundParams<S>,
        histories: &[Tensor<S>],
    ) -> Tensor<S> {
        assert!(!histories.is_empty(), "contract violation: encoder needs at least the target");
        let embedded: Vec<Tensor<S>> =
            histories.iter().map(|h| self.embed(tape, bound, h)).collect();

        // Regroup per-agent time matrices into per-frame agent matrices so
        // the LSTM and spatial attention batch across agents.
        let per_frame: Vec<Tensor<S>> = (0..HIST_LEN)
            .map(|t| {
                let rows: Vec<Tensor<S>> = embedded.iter().map(|e| tape.row(e, t)).collect();
                let refs: Vec<&Tensor<S>> = rows.iter().collect();
                tape.stack_rows(&refs)
            })
            .collect();

        let hidden: Vec<Tensor<S>> = if self.stages.temporal {
            self.cell.roll(tape, bound, &per_frame)
        } else {
            per_frame
        };

        let s = if self.stages.spatial {
            let mut rows = Vec::with_capacity(HIST_LEN);
            for h in &hidden {
                let target = tape.narrow(h, 0, 0, 1);
                let q = tape.matmul(&target, bound.get("st.sp.wq"));
                let k = tape.matmul(h, bound.get("st.sp.wk"));
                let v = tape.matmul(h, bound.get("st.sp.wv"));
                let att = multi_head_attend(tape, &q, &k, &v, self.heads);
                let gated = glu_gate(tape, bound, "st.sp", &att);
                rows.push(tape.reshape(&gated, vec![self.d]));
            }
            let refs: Vec<&Tensor<S>> = rows.iter().collect();
            tape.stack_rows(&refs)
        } else {
            let rows: Vec<Tensor<S>> = hidden.iter().map(|h| tape.row(h, 0)).collect();
            let refs: Vec<&Tensor<S>> = rows.iter().collect();
            tape.stack_rows(&refs)
        };

        if self.stages.fusion {
            let q = tape.matmul(&s, bound.get("st.fu.wq"));
            let k = tape.matmul(&s, bound.get("st.fu.wk"));
            let v = tape.matmul(&s, bound.get("st.fu.wv"));
            let att = multi_head_attend(tape, &q, &k, &v, self.heads);
            glu_gate(tape, bound, "st.fu", &att)
        } else {
            s
        }
    }

    /// F = LeakyReLU(linear(concat(most recent fused row, confidence))).
    /// `None` stands for a disabled diffusion branch and contributes zeros.
    pub fn fuse_confidence<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundParams<S>,
        u: &Tensor<S>,
        conf: Option<&Tensor<S>>,
    ) -> Tensor<S> {
        assert_eq!(u.shape(), [HIST_LEN, self.d], "contract violation: U shape {:?}", u.shape());
        let u0 = tape.row(u, HIST_LEN - 1);
        let zeros;
        let conf = match conf {
            Some(c) => {
                assert_eq!(
                    c.shape(),
                    [self.conf_width],
                    "contract violation: confidence shape {:?}, expected [{}]",
                    c.shape(),
                    self.conf_width
                );
                c
            }
            None => {
                zeros = tape.constant(&Tensor::zeros(vec![self.conf_width]));
                &zeros
            }
        };
        let x = tape.concat(&[&u0, conf], 0);
        let f = tape.linear_vec(&x, bound.get("st.fuse.w"), bound.get("st.fuse.b"));
        tape.leaky_relu(&f, S::of(self.slope))
    }

    /// Full pass: encode histories and fuse with the confidence vector.
    pub fn forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundParams<S>,
        histories: &[Tensor<S>],
        conf: Option<&Tensor<S>>,
    ) -> Tensor<S> {
        let u = self.encode(tape, bound, histories);
        self.fuse_confidence(tape, bound, &u, conf)
    }
}
