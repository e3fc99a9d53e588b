use crate::numerics::{BoundParams, ParamSet, Real, SplitRng, Tape, Tensor};

/// A single LSTM cell stepped over a sequence, batched across rows (one row
/// per agent or per scene). Gates use the combined-affine layout
/// [input, forget, cell, output] so one matmul per source covers all four.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub in_width: usize,
    pub hidden: usize,
    prefix: String,
}

impl LstmCell {
    pub fn new(prefix: &str, in_width: usize, hidden: usize) -> Self {
        LstmCell { in_width, hidden, prefix: prefix.to_string() }
    }

    pub fn register_params<S: Real>(&self, params: &mut ParamSet<S>, rng: &mut SplitRng) {
        let h4 = 4 * self.hidden;
        params.add_uniform(&format!("{}.wx", self.prefix), vec![self.in_width, h4], self.in_width, rng);
        params.add_uniform(&format!("{}.wh", self.prefix), vec![self.hidden, h4], self.hidden, rng);
        params.add_zeros(&format!("{}.b", self.prefix), vec![h4]);
    }

    /// Zero initial state for a batch of `rows` sequences.
    pub fn zero_state<S: Real>(&self, tape: &mut Tape<S>, rows: usize) -> (Tensor<S>, Tensor<S>) {
        let h = tape.constant(&Tensor::zeros(vec![rows, self.hidden]));
        let c = tape.constant(&Tensor::zeros(vec![rows, self.hidden]));
        (h, c)
    }

    /// One step: x is [rows x in_width], state tensors are [rows x hidden].
    pub fn step<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundParams<S>,
        x: &Tensor<S>,
        h: &Tensor<S>,
        c: &Tensor<S>,
    ) -> (Tensor<S>, Tensor<S>) {
        assert_eq!(
            x.shape()[1],
            self.in_width,
            "contract violation: lstm input shape {:?}, expected width {}",
            x.shape(),
            self.in_width
        );
        let gx = tape.matmul(x, bound.get(&format!("{}.wx", self.prefix)));
        let gh = tape.matmul(h, bound.get(&format!("{}.wh", self.prefix)));
        let g = tape.add(&gx, &gh);
        let g = tape.add_row(&g, bound.get(&format!("{}.b", self.prefix)));

        let hid = self.hidden;
        let i = tape.narrow(&g, 1, 0, hid);
        let f = tape.narrow(&g, 1, hid, hid);
        let cand = tape.narrow(&g, 1, 2 * hid, hid);
        let o = tape.narrow(&g, 1, 3 * hid, hid);
        let i = tape.sigmoid(&i);
        let f = tape.sigmoid(&f);
        let cand = tape.tanh(&cand);
        let o = tape.sigmoid(&o);

        let keep = tape.mul(&f, c);
        let write = tape.mul(&i, &cand);
        let c_new = tape.add(&keep, &write);
        let c_act = tape.tanh(&c_new);
        let h_new = tape.mul(&o, &c_act);
        (h_new, c_new)
    }

    /// Rolls the cell over `inputs` (one [rows x in_width] tensor per step)
    /// from zero state; returns the hidden state after every step.
    pub fn roll<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundParams<S>,
        inputs: &[Tensor<S>],
    ) -> Vec<Tensor<S>> {
        assert!(!inputs.is_empty(), "contract violation: empty sequence");
        let rows = inputs[0].shape()[0];
        let (mut h, mut c) = self.zero_state(tape, rows);
        let mut states = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (nh, nc) = self.step(tape, bound, x, &h, &c);
            h = nh;
            c = nc;
            states.push(h.clone());
        }
        states
    }
}
