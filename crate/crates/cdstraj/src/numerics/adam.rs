use std::collections::BTreeMap;

use super::params::{Gradients, ParamSet};
use super::scalar::Real;

/// Adam optimizer with bias correction.
///
/// Moment buffers are keyed by parameter name and updated in name order, so
/// two runs over identical gradients produce bit-identical trajectories.
#[derive(Clone)]
pub struct Adam<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    t: u64,
    m: BTreeMap<String, Vec<S>>,
    v: BTreeMap<String, Vec<S>>,
}

impl<S: Real> Adam<S> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr: S::of(lr),
            beta1: S::of(beta1),
            beta2: S::of(beta2),
            eps: S::of(eps),
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Standard defaults: lr 1e-3, beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn with_defaults() -> Self {
        Self::new(1e-3, 0.9, 0.999, 1e-8)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One optimizer step over every gradient entry.
    pub fn step(&mut self, params: &mut ParamSet<S>, grads: &Gradients<S>) {
        self.t += 1;
        let t = self.t;
        let one = S::one();
        let bc1 = one - self.beta1.powi(t as i32);
        let bc2 = one - self.beta2.powi(t as i32);
        for (name, g) in &grads.map {
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![S::zero(); g.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![S::zero(); g.len()]);
            assert_eq!(
                m.len(),
                g.len(),
                "contract violation: gradient length changed for {name:?}"
            );
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g[i] * g[i];
            }
            let (m, v) = (&self.m[name], &self.v[name]);
            let (lr, eps) = (self.lr, self.eps);
            params.update(name, |i, w| {
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w - lr * m_hat / (v_hat.sqrt() + eps)
            });
        }
    }

    /// Moment buffers in name order, for checkpointing.
    pub fn moments(&self) -> impl Iterator<Item = (&str, &[S], &[S])> {
        self.m
            .iter()
            .map(|(k, m)| (k.as_str(), m.as_slice(), &self.v[k][..]))
    }

    /// Restores moments and step count from a checkpoint.
    pub fn restore(&mut self, t: u64, moments: BTreeMap<String, (Vec<S>, Vec<S>)>) {
        self.t = t;
        self.m.clear();
        self.v.clear();
        for (name, (m, v)) in moments {
            assert_eq!(
                m.len(),
                v.len(),
                "contract violation: moment lengths differ for {name:?}"
            );
            self.m.insert(name.clone(), m);
            self.v.insert(name, v);
        }
    }
}
