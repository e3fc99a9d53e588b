use std::collections::BTreeMap;

use super::rng::SplitRng;
use super::scalar::Real;
use super::tensor::Tensor;

/// How a parameter was initialized; kept for checkpoint introspection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitSpec {
    /// Uniform in +-sqrt(1/fan_in).
    UniformFanIn { fan_in: usize },
    Zeros,
}

/// Named model parameters. Iteration is name-ordered, which fixes the
/// summation and serialization order everywhere (determinism contract).
#[derive(Clone)]
pub struct ParamSet<S> {
    entries: BTreeMap<String, (Tensor<S>, InitSpec)>,
}

impl<S: Real> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> std::fmt::Debug for ParamSet<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut d = f.debug_map();
        for (name, (t, _)) in &self.entries {
            d.entry(name, &t.shape());
        }
        d.finish()
    }
}

impl<S: Real> ParamSet<S> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    fn insert(&mut self, name: &str, t: Tensor<S>, init: InitSpec) {
        assert!(
            self.entries.insert(name.to_string(), (t, init)).is_none(),
            "contract violation: duplicate parameter {name:?}"
        );
    }

    /// Weight drawn uniformly in +-sqrt(1/fan_in).
    pub fn add_uniform(&mut self, name: &str, shape: Vec<usize>, fan_in: usize, rng: &mut SplitRng) {
        assert!(fan_in > 0, "contract violation: fan_in 0 for {name:?}");
        let bound = (1.0 / fan_in as f64).sqrt();
        let t = Tensor::rand_uniform(shape, bound, rng);
        self.insert(name, t, InitSpec::UniformFanIn { fan_in });
    }

    pub fn add_zeros(&mut self, name: &str, shape: Vec<usize>) {
        self.insert(name, Tensor::zeros(shape), InitSpec::Zeros);
    }

    /// Weight + zero bias pair for a linear layer `[in x out]`.
    pub fn add_linear(&mut self, prefix: &str, in_dim: usize, out_dim: usize, rng: &mut SplitRng) {
        self.add_uniform(&format!("{prefix}.w"), vec![in_dim, out_dim], in_dim, rng);
        self.add_zeros(&format!("{prefix}.b"), vec![out_dim]);
    }

    pub fn get(&self, name: &str) -> &Tensor<S> {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("contract violation: unknown parameter {name:?}"))
            .0
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn init_spec(&self, name: &str) -> InitSpec {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("contract violation: unknown parameter {name:?}"))
            .1
    }

    /// Replaces values of an existing entry; the shape must match.
    pub fn set(&mut self, name: &str, values: Vec<S>) {
        let entry = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("contract violation: unknown parameter {name:?}"));
        assert_eq!(
            values.len(),
            entry.0.len(),
            "contract violation: parameter {name:?} expects {} values, got {}",
            entry.0.len(),
            values.len()
        );
        let shape = entry.0.shape().to_vec();
        entry.0 = Tensor::new(shape, values);
    }

    /// In-place update: w[i] += delta(i, w[i]). Used by the optimizer.
    pub fn update(&mut self, name: &str, f: impl Fn(usize, S) -> S) {
        let entry = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("contract violation: unknown parameter {name:?}"));
        let data = entry.0.data_mut();
        for (i, v) in data.iter_mut().enumerate() {
            *v = f(i, *v);
        }
        assert!(
            data.iter().all(|v| v.is_finite()),
            "contract violation: non-finite parameter after update of {name:?}"
        );
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(k, (t, _))| (k.as_str(), t))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.values().map(|(t, _)| t.len()).sum()
    }
}

/// Named gradients in parameter order.
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    pub map: BTreeMap<String, Vec<S>>,
}

impl<S: Real> Gradients<S> {
    pub fn zeros_like(params: &ParamSet<S>) -> Self {
        let map = params
            .iter()
            .map(|(name, t)| (name.to_string(), vec![S::zero(); t.len()]))
            .collect();
        Self { map }
    }

    /// Accumulates `other` into `self`; the key sets must match.
    pub fn add_assign(&mut self, other: &Gradients<S>) {
        assert_eq!(
            self.map.len(),
            other.map.len(),
            "contract violation: gradient sets differ in size"
        );
        for (name, acc) in self.map.iter_mut() {
            let src = other
                .map
                .get(name)
                .unwrap_or_else(|| panic!("contract violation: missing gradient {name:?}"));
            for (a, &s) in acc.iter_mut().zip(src) {
                *a = *a + s;
            }
        }
    }

    pub fn scale(&mut self, c: S) {
        for g in self.map.values_mut() {
            for v in g.iter_mut() {
                *v = *v * c;
            }
        }
    }

    /// Largest absolute component, for diagnostics.
    pub fn max_abs(&self) -> S {
        self.map
            .values()
            .flat_map(|g| g.iter())
            .fold(S::zero(), |m, &v| m.max(v.abs()))
    }
}
