use crate::config::{Aggregate, DiffusionConfig};
use crate::numerics::{BoundParams, ParamSet, Real, SplitRng, Tape, Tensor};
use crate::INPUT_SCALE;

/// Pools the denoised ensemble into a fixed-width confidence vector plus a
/// point estimate of the neighbor futures.
///
/// Pooling is either the member mean (width stays `unit_width`) or a flat
/// concatenation of all members (width `k * unit_width`); the pooled vector
/// then passes through one hidden layer to produce `conf`, and a final
/// linear head maps `conf` back to a `unit_width` estimate.
pub struct EnsembleAggregator {
    pub unit_width: usize,
    pub k: usize,
    pub hidden: usize,
    pub mode: Aggregate,
    slope: f64,
}

impl EnsembleAggregator {
    pub fn from_config(cfg: &DiffusionConfig, unit_width: usize) -> Self {
        EnsembleAggregator {
            unit_width,
            k: cfg.k,
            hidden: cfg.hidden,
            mode: cfg.aggregate,
            slope: cfg.leaky_slope,
        }
    }

    /// Width of the pooled vector entering the hidden layer.
    pub fn in_width(&self) -> usize {
        match self.mode {
            Aggregate::Mean => self.unit_width,
            Aggregate::Concat => self.k * self.unit_width,
        }
    }

    pub fn register_params<S: Real>(&self, params: &mut ParamSet<S>, rng: &mut SplitRng) {
        params.add_linear("agg.l1", self.in_width(), self.hidden, rng);
        params.add_linear("agg.l2", self.hidden, self.unit_width, rng);
    }

    /// `units` is the [k x unit_width] ensemble. Returns `(conf, estimate)`
    /// where `conf` has width `hidden` and `estimate` has width `unit_width`.
    pub fn forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundParams<S>,
        units: &Tensor<S>,
    ) -> (Tensor<S>, Tensor<S>) {
        assert_eq!(
            units.shape(),
            [self.k, self.unit_width],
            "contract violation: ensemble shape {:?}, expected [{}, {}]",
            units.shape(),
            self.k,
            self.unit_width
        );
        let pooled = match self.mode {
            Aggregate::Mean => tape.mean_rows(units),
            Aggregate::Concat => tape.reshape(units, vec![self.k * self.unit_width]),
        };
        let scaled = tape.scale(&pooled, S::of(INPUT_SCALE));
        let h = tape.linear_vec(&scaled, bound.get("agg.l1.w"), bound.get("agg.l1.b"));
        let conf = tape.leaky_relu(&h, S::of(self.slope));
        let estimate = tape.linear_vec(&conf, bound.get("agg.l2.w"), bound.get("agg.l2.b"));
        (conf, estimate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, grad_check};

    fn fixture(mode: Aggregate) -> (EnsembleAggregator, ParamSet<f64>, Tensor<f64>) {
        let cfg = DiffusionConfig {
            k: 3,
            hidden: 7,
            aggregate: mode,
            ..DiffusionConfig::default()
        };
        let agg = EnsembleAggregator::from_config(&cfg, 4);
        let mut params = ParamSet::new();
        let mut rng = SplitRng::new(31);
        agg.register_params(&mut params, &mut rng);
        let units = Tensor::randn(vec![3, 4], &mut rng);
        (agg, params, units)
    }

    #[test]
    fn output_widths_follow_config() {
        for (mode, in_w) in [(Aggregate::Mean, 4usize), (Aggregate::Concat, 12)] {
            let (agg, params, units) = fixture(mode);
            assert_eq!(agg.in_width(), in_w);
            assert_eq!(params.get("agg.l1.w").shape(), &[in_w, 7]);
            let mut tape = Tape::new();
            let bound = tape.bind(&params);
            let units = tape.constant(&units);
            let (conf, est) = agg.forward(&mut tape, &bound, &units);
            assert_eq!(conf.shape(), &[7]);
            assert_eq!(est.shape(), &[4]);
        }
    }

    #[test]
    fn mean_pooling_is_member_order_invariant() {
        let (agg, params, units) = fixture(Aggregate::Mean);
        let run = |rows: &[usize]| -> Vec<f64> {
            let mut data = Vec::new();
            for &r in rows {
                data.extend_from_slice(&units.data()[r * 4..(r + 1) * 4]);
            }
            let permuted = Tensor::new(vec![3, 4], data);
            let mut tape = Tape::new();
            let bound = tape.bind(&params);
            let u = tape.constant(&permuted);
            let (conf, _) = agg.forward(&mut tape, &bound, &u);
            conf.data().to_vec()
        };
        let a = run(&[0, 1, 2]);
        let b = run(&[2, 0, 1]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_pooling_distinguishes_member_order() {
        let (agg, params, units) = fixture(Aggregate::Concat);
        let run = |rows: &[usize]| -> Vec<f64> {
            let mut data = Vec::new();
            for &r in rows {
                data.extend_from_slice(&units.data()[r * 4..(r + 1) * 4]);
            }
            let permuted = Tensor::new(vec![3, 4], data);
            let mut tape = Tape::new();
            let bound = tape.bind(&params);
            let u = tape.constant(&permuted);
            let (conf, _) = agg.forward(&mut tape, &bound, &u);
            conf.data().to_vec()
        };
        let a = run(&[0, 1, 2]);
        let b = run(&[2, 0, 1]);
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (agg, params, units) = fixture(Aggregate::Mean);
        for name in params.names() {
            let base = params.get(&name).data().to_vec();
            let mut eval = |x: &[f64]| -> f64 {
                let mut p = params.clone();
                p.set(&name, x.to_vec());
                let mut tape = Tape::new();
                let bound = tape.bind(&p);
                let u = tape.constant(&units);
                let (conf, est) = agg.forward(&mut tape, &bound, &u);
                let joined = tape.concat(&[&conf, &est], 0);
                tape.sum(&joined).item()
            };
            let numeric = finite_diff_grad(&mut eval, &base, 1e-5);

            let mut tape = Tape::new();
            let bound = tape.bind(&params);
            let u = tape.constant(&units);
            let (conf, est) = agg.forward(&mut tape, &bound, &u);
            let joined = tape.concat(&[&conf, &est], 0);
            let loss = tape.sum(&joined);
            let grads = tape.backward(&loss);
            let analytic = bound.gradients(&grads);
            grad_check(&analytic.map[&name], &numeric, 1e-6)
                .unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}
