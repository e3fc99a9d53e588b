use std::sync::Arc;

use super::rng::SplitRng;
use super::scalar::Real;

/// Identifies the tape and node a tensor was recorded on, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct TapeRef {
    pub tape: u64,
    pub node: usize,
}

/// Dense row-major tensor. Values live behind an `Arc`, so clones are cheap
/// and a recording tape can alias the same buffer without copying.
#[derive(Clone, Debug)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
    pub(crate) node: Option<TapeRef>,
}

impl<S: Real> Tensor<S> {
    /// Builds a tensor, rejecting NaN/Inf values and shape/length mismatches.
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Self {
        let expected: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            expected,
            "contract violation: shape {:?} expects {} values, got {}",
            shape,
            expected,
            data.len()
        );
        assert!(
            data.iter().all(|v| v.is_finite()),
            "contract violation: non-finite value in tensor of shape {:?}",
            shape
        );
        Self { shape, data: Arc::new(data), node: None }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Arc<Vec<S>>, node: Option<TapeRef>) -> Self {
        Self { shape, data, node }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self { shape, data: Arc::new(vec![S::zero(); n]), node: None }
    }

    pub fn scalar(v: S) -> Self {
        Self::new(vec![1], vec![v])
    }

    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Self {
        Self::new(shape, values.iter().map(|&v| S::of(v)).collect())
    }

    /// Fills a tensor with independent standard-normal draws.
    pub fn randn(shape: Vec<usize>, rng: &mut SplitRng) -> Self {
        let n: usize = shape.iter().product();
        let data: Vec<S> = (0..n).map(|_| S::of(rng.standard_normal())).collect();
        Self::new(shape, data)
    }

    /// Uniform draws in [-bound, bound].
    pub fn rand_uniform(shape: Vec<usize>, bound: f64, rng: &mut SplitRng) -> Self {
        let n: usize = shape.iter().product();
        let data: Vec<S> = (0..n).map(|_| S::of(rng.range(-bound, bound))).collect();
        Self::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<S>> {
        Arc::clone(&self.data)
    }

    /// Mutable access to the underlying buffer (copy-on-write if shared).
    pub fn data_mut(&mut self) -> &mut Vec<S> {
        self.node = None;
        Arc::make_mut(&mut self.data)
    }

    /// Element of a rank-2 tensor.
    pub fn at2(&self, i: usize, j: usize) -> S {
        assert_eq!(self.rank(), 2, "contract violation: at2 on rank-{} tensor", self.rank());
        self.data[i * self.shape[1] + j]
    }

    /// Single scalar value of a one-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.len(), 1, "contract violation: item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Drops any tape association, turning the tensor into a plain constant.
    pub fn detach(&self) -> Self {
        Self { shape: self.shape.clone(), data: Arc::clone(&self.data), node: None }
    }
}

/// out[m x n] = a[m x k] . b[k x n]
///
/// ikj loop order keeps the inner loop contiguous; rows of `a` that carry
/// zeros (masked agent slots) skip whole passes over `b`.
pub(crate) fn k_matmul<S: Real>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == S::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                o_row[j] = o_row[j] + aik * b_row[j];
            }
        }
    }
    out
}

/// Dot product over eight independent accumulator lanes. A single
/// accumulator would serialize the FP adds and block vectorization; the
/// fixed lane count keeps results identical across reruns.
#[inline]
fn dot_lanes<S: Real>(x: &[S], y: &[S]) -> S {
    const L: usize = 8;
    let mut acc = [S::zero(); L];
    let whole = x.len() / L * L;
    for base in (0..whole).step_by(L) {
        for l in 0..L {
            acc[l] = acc[l] + x[base + l] * y[base + l];
        }
    }
    let mut tail = S::zero();
    for t in whole..x.len() {
        tail = tail + x[t] * y[t];
    }
    let p0 = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    let p1 = (acc[4] + acc[5]) + (acc[6] + acc[7]);
    (p0 + p1) + tail
}

/// out[m x n] = a[m x k] . b[n x k]^T  (rows of both operands are contiguous)
pub(crate) fn k_matmul_abt<S: Real>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            o_row[j] = dot_lanes(a_row, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// out[m x n] = a[k x m]^T . b[k x n]  (outer-product accumulation over k)
pub(crate) fn k_matmul_atb<S: Real>(a: &[S], b: &[S], k: usize, m: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for t in 0..k {
        let a_row = &a[t * m..(t + 1) * m];
        let b_row = &b[t * n..(t + 1) * n];
        for i in 0..m {
            let c = a_row[i];
            if c == S::zero() {
                continue;
            }
            let o_row = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                o_row[j] = o_row[j] + c * b_row[j];
            }
        }
    }
    out
}
