use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::params::{Gradients, ParamSet};
use super::scalar::Real;
use super::tensor::{k_matmul, k_matmul_abt, k_matmul_atb, TapeRef, Tensor};

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Differentiable operations. Each variant stores the ids of its inputs;
/// ids are creation-ordered, so every input precedes its consumer and one
/// reverse sweep visits each node exactly once.
#[derive(Clone, Debug)]
enum Op<S> {
    Input,
    Param,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, S),
    Shift(usize, S),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MatMul(usize, usize),
    /// a . b^T with b stored row-major.
    MatMulAbt(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    LeakyRelu(usize, S),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Clamp(usize, S, S),
    SoftmaxRows(usize),
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
    Concat(Vec<usize>, usize),
    StackRows(Vec<usize>),
    Row(usize, usize),
    Narrow { a: usize, axis: usize, start: usize, len: usize },
    Reshape(usize),
}

struct Node<S> {
    op: Op<S>,
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
    needs_grad: bool,
}

/// Wengert tape: records a forward computation and replays it in reverse to
/// accumulate gradients. Tensors returned by tape methods stay associated
/// with this tape; mixing tensors across tapes is a contract violation.
pub struct Tape<S> {
    id: u64,
    nodes: Vec<Node<S>>,
}

/// Gradient buffers produced by [`Tape::backward`], indexed by node.
pub struct Backprop<S> {
    tape_id: u64,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Real> Backprop<S> {
    /// Gradient of the loss w.r.t. a recorded tensor; `None` if the loss does
    /// not reach it.
    pub fn grad(&self, t: &Tensor<S>) -> Option<&[S]> {
        let r = t.node.expect("tensor was never recorded on a tape");
        assert_eq!(r.tape, self.tape_id, "contract violation: tensor from a different tape");
        self.grads[r.node].as_deref()
    }
}

/// Tape-bound view of a parameter set: name -> recorded leaf tensor.
pub struct BoundParams<S> {
    tape_id: u64,
    map: BTreeMap<String, Tensor<S>>,
}

impl<S: Real> BoundParams<S> {
    pub fn get(&self, name: &str) -> &Tensor<S> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("contract violation: unbound parameter {name:?}"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    /// Collects named gradients after a backward pass; parameters the loss
    /// never reached get explicit zeros.
    pub fn gradients(&self, bp: &Backprop<S>) -> Gradients<S> {
        assert_eq!(self.tape_id, bp.tape_id, "contract violation: backprop from a different tape");
        let mut map = BTreeMap::new();
        for (name, t) in &self.map {
            let g = match bp.grad(t) {
                Some(g) => g.to_vec(),
                None => vec![S::zero(); t.len()],
            };
            map.insert(name.clone(), g);
        }
        Gradients { map }
    }
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Self { id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<S>, shape: Vec<usize>, data: Vec<S>) -> Tensor<S> {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by {op:?}"
        );
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param => true,
            _ => self.op_inputs(&op).iter().any(|&i| self.nodes[i].needs_grad),
        };
        let arc = Arc::new(data);
        let node = Node { op, shape: shape.clone(), data: Arc::clone(&arc), needs_grad };
        self.nodes.push(node);
        Tensor::from_parts(shape, arc, Some(TapeRef { tape: self.id, node: self.nodes.len() - 1 }))
    }

    fn op_inputs(&self, op: &Op<S>) -> Vec<usize> {
        match op {
            Op::Input | Op::Param => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::MatMul(a, b)
            | Op::MatMulAbt(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Shift(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::LeakyRelu(a, _)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Sqrt(a)
            | Op::Clamp(a, _, _)
            | Op::SoftmaxRows(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::Row(a, _)
            | Op::Narrow { a, .. }
            | Op::Reshape(a) => vec![*a],
            Op::Concat(parts, _) | Op::StackRows(parts) => parts.clone(),
        }
    }

    /// Resolves a tensor to a node id, interning plain constants as inputs.
    fn nid(&mut self, t: &Tensor<S>) -> usize {
        match t.node {
            Some(r) => {
                assert_eq!(
                    r.tape, self.id,
                    "contract violation: tensor recorded on tape {} used on tape {}",
                    r.tape, self.id
                );
                r.node
            }
            None => {
                let shape = t.shape().to_vec();
                let arc = t.data_arc();
                self.nodes.push(Node { op: Op::Input, shape, data: arc, needs_grad: false });
                self.nodes.len() - 1
            }
        }
    }

    /// Records a constant leaf (no gradient).
    pub fn constant(&mut self, t: &Tensor<S>) -> Tensor<S> {
        let id = self.nid(&t.detach());
        Tensor::from_parts(
            t.shape().to_vec(),
            t.data_arc(),
            Some(TapeRef { tape: self.id, node: id }),
        )
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: &Tensor<S>) -> Tensor<S> {
        self.push(Op::Param, t.shape().to_vec(), t.data().to_vec())
    }

    /// Binds every entry of a parameter set as a trainable leaf.
    pub fn bind(&mut self, params: &ParamSet<S>) -> BoundParams<S> {
        let mut map = BTreeMap::new();
        for (name, t) in params.iter() {
            let bound =
                self.push(Op::Param, t.shape().to_vec(), t.data().to_vec());
            map.insert(name.to_string(), bound);
        }
        BoundParams { tape_id: self.id, map }
    }

    /// Binds every entry as a frozen constant (values flow, gradients do not).
    pub fn bind_frozen(&mut self, params: &ParamSet<S>) -> BoundParams<S> {
        let mut map = BTreeMap::new();
        for (name, t) in params.iter() {
            map.insert(name.to_string(), self.constant(t));
        }
        BoundParams { tape_id: self.id, map }
    }

    fn binary_elementwise(
        &mut self,
        a: &Tensor<S>,
        b: &Tensor<S>,
        op_name: &str,
        f: impl Fn(S, S) -> S,
        make: impl Fn(usize, usize) -> Op<S>,
    ) -> Tensor<S> {
        assert_eq!(
            a.shape(),
            b.shape(),
            "contract violation: {op_name} shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
        let (ia, ib) = (self.nid(a), self.nid(b));
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        self.push(make(ia, ib), a.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
        self.binary_elementwise(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
        self.binary_elementwise(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
        self.binary_elementwise(a, b, "div", |x, y| x / y, Op::Div)
    }

    fn unary(
        &mut self,
        a: &Tensor<S>,
        f: impl Fn(S) -> S,
        make: impl Fn(usize) -> Op<S>,
    ) -> Tensor<S> {
        let ia = self.nid(a);
        let data = a.data().iter().map(|&x| f(x)).collect();
        self.push(make(ia), a.shape().to_vec(), data)
    }

    pub fn neg(&mut self, a: &Tensor<S>) -> Tensor<S> {
        self.unary(a, |x| -x, Op::Neg)
    }

    pub fn scale(&mut self, a: &Tensor<S>, c: S) -> Tensor<S> {
        self.unary(a, |x| x * c, |i| Op::Scale(i, c))
    }

    pub fn shift(&mut self, a: &Tensor<S>, c: S) -> Tensor<S> {
        self.unary(a, |x| x + c, |i| Op::Shift(i, c))
    }

    pub fn sigmoid(&mut self, a: &Tensor<S>) -> Tensor<S> {
        self.unary(a, |x| S::one() / (S::one() + (-x).exp()), Op::Sigmoid)
    }

    pub fn tanh(&mut self, a: &Tensor<S>) -> Tensor<S> {
        self.unary(a, |x| x.tanh(), Op::Tanh)
    }

    pub fn leaky_relu(&mut self, a: &Tensor<S>, slope: S) -> Tensor<S> {
        self.unary(a, |x| if x > S::zero() { x } else { x * slope }, |i| Op::LeakyRelu(i, slope))
    }

    pub fn exp(&mut self, a: &Tensor<S>) -> Tensor<S> {
        self.unary(a, |x| x.exp(), Op::Exp)
    }

    pub fn ln(&mut self, a: &Tensor<S>) -> Tensor<S> {
        self.unary(a, |x| x.ln(), Op::Ln)
    }

    pub fn sqrt(&mut self, a: &Tensor<S>) -> Tensor<S> {
        self.unary(a, |x| x.sqrt(), Op::Sqrt)
    }

    pub fn clamp(&mut self, a: &Tensor<S>, lo: S, hi: S) -> Tensor<S> {
        assert!(lo < hi, "contract violation: clamp bounds {lo} >= {hi}");
        self.unary(
            a,
            |x| {
                if x < lo {
                    lo
                } else if x > hi {
                    hi
                } else {
                    x
                }
            },
            |i| Op::Clamp(i, lo, hi),
        )
    }

    /// Adds `row` to every row of `m`.
    pub fn add_row(&mut self, m: &Tensor<S>, row: &Tensor<S>) -> Tensor<S> {
        let (r, c) = self.rows_cols(m, "add_row");
        assert_eq!(
            row.shape(),
            [c],
            "contract violation: add_row row shape {:?} vs width {c}",
            row.shape()
        );
        let (im, ir) = (self.nid(m), self.nid(row));
        let mut data = m.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = data[i * c + j] + row.data()[j];
            }
        }
        self.push(Op::AddRow(im, ir), vec![r, c], data)
    }

    /// Multiplies every row of `m` elementwise by `row`.
    pub fn mul_row(&mut self, m: &Tensor<S>, row: &Tensor<S>) -> Tensor<S> {
        let (r, c) = self.rows_cols(m, "mul_row");
        assert_eq!(
            row.shape(),
            [c],
            "contract violation: mul_row row shape {:?} vs width {c}",
            row.shape()
        );
        let (im, ir) = (self.nid(m), self.nid(row));
        let mut data = m.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = data[i * c + j] * row.data()[j];
            }
        }
        self.push(Op::MulRow(im, ir), vec![r, c], data)
    }

    fn rows_cols(&self, t: &Tensor<S>, op: &str) -> (usize, usize) {
        assert_eq!(
            t.rank(),
            2,
            "contract violation: {op} expects rank-2 tensor, got shape {:?}",
            t.shape()
        );
        (t.shape()[0], t.shape()[1])
    }

    pub fn matmul(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
        let (m, ka) = self.rows_cols(a, "matmul");
        let (kb, n) = self.rows_cols(b, "matmul");
        assert_eq!(
            ka, kb,
            "contract violation: matmul inner dims {:?} . {:?}",
            a.shape(),
            b.shape()
        );
        let (ia, ib) = (self.nid(a), self.nid(b));
        let data = k_matmul(a.data(), b.data(), m, ka, n);
        self.push(Op::MatMul(ia, ib), vec![m, n], data)
    }

    /// a[m x k] . b[n x k]^T -> [m x n]
    pub fn matmul_abt(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
        let (m, ka) = self.rows_cols(a, "matmul_abt");
        let (n, kb) = self.rows_cols(b, "matmul_abt");
        assert_eq!(
            ka, kb,
            "contract violation: matmul_abt inner dims {:?} . {:?}^T",
            a.shape(),
            b.shape()
        );
        let (ia, ib) = (self.nid(a), self.nid(b));
        let data = k_matmul_abt(a.data(), b.data(), m, ka, n);
        self.push(Op::MatMulAbt(ia, ib), vec![m, n], data)
    }

    /// Softmax along the last axis (each row is one normalization lane).
    /// Computed as exp(x - rowmax) / sum for stability.
    pub fn softmax_rows(&mut self, a: &Tensor<S>) -> Tensor<S> {
        let (lanes, width) = match a.rank() {
            1 => (1, a.shape()[0]),
            2 => (a.shape()[0], a.shape()[1]),
            r => panic!("contract violation: softmax on rank-{r} tensor"),
        };
        assert!(width > 0, "contract violation: softmax over empty lane");
        let ia = self.nid(a);
        let mut data = vec![S::zero(); a.len()];
        for l in 0..lanes {
            let src = &a.data()[l * width..(l + 1) * width];
            let max = src.iter().cloned().fold(S::neg_infinity(), S::max);
            let dst = &mut data[l * width..(l + 1) * width];
            let mut sum = S::zero();
            for j in 0..width {
                let e = (src[j] - max).exp();
                dst[j] = e;
                sum = sum + e;
            }
            for v in dst.iter_mut() {
                *v = *v / sum;
            }
        }
        self.push(Op::SoftmaxRows(ia), a.shape().to_vec(), data)
    }

    pub fn sum(&mut self, a: &Tensor<S>) -> Tensor<S> {
        let ia = self.nid(a);
        let s = a.data().iter().fold(S::zero(), |acc, &x| acc + x);
        self.push(Op::Sum(ia), vec![1], vec![s])
    }

    pub fn mean(&mut self, a: &Tensor<S>) -> Tensor<S> {
        assert!(!a.is_empty(), "contract violation: mean of empty tensor");
        let ia = self.nid(a);
        let s = a.data().iter().fold(S::zero(), |acc, &x| acc + x);
        self.push(Op::Mean(ia), vec![1], vec![s / S::of(a.len() as f64)])
    }

    /// Column means of a rank-2 tensor: [m x n] -> [n].
    pub fn mean_rows(&mut self, a: &Tensor<S>) -> Tensor<S> {
        let (m, n) = self.rows_cols(a, "mean_rows");
        assert!(m > 0, "contract violation: mean_rows of empty tensor");
        let ia = self.nid(a);
        let mut data = vec![S::zero(); n];
        for i in 0..m {
            for j in 0..n {
                data[j] = data[j] + a.data()[i * n + j];
            }
        }
        let inv = S::one() / S::of(m as f64);
        for v in data.iter_mut() {
            *v = *v * inv;
        }
        self.push(Op::MeanRows(ia), vec![n], data)
    }

    /// Concatenation: axis 0 joins rank-1 vectors, axis 1 joins rank-2
    /// tensors column-wise.
    pub fn concat(&mut self, parts: &[&Tensor<S>], axis: usize) -> Tensor<S> {
        assert!(!parts.is_empty(), "contract violation: concat of no parts");
        match axis {
            0 => {
                let ids: Vec<usize> = parts.iter().map(|t| {
                    assert_eq!(t.rank(), 1, "contract violation: concat axis 0 expects vectors");
                    self.nid(t)
                }).collect();
                let mut data = Vec::new();
                for t in parts {
                    data.extend_from_slice(t.data());
                }
                let n = data.len();
                self.push(Op::Concat(ids, 0), vec![n], data)
            }
            1 => {
                let rows = parts[0].shape()[0];
                let ids: Vec<usize> = parts.iter().map(|t| {
                    assert_eq!(
                        t.rank(),
                        2,
                        "contract violation: concat axis 1 expects rank-2 tensors"
                    );
                    assert_eq!(
                        t.shape()[0],
                        rows,
                        "contract violation: concat axis 1 row counts differ"
                    );
                    self.nid(t)
                }).collect();
                let total: usize = parts.iter().map(|t| t.shape()[1]).sum();
                let mut data = vec![S::zero(); rows * total];
                let mut off = 0;
                for t in parts {
                    let c = t.shape()[1];
                    for i in 0..rows {
                        data[i * total + off..i * total + off + c]
                            .copy_from_slice(&t.data()[i * c..(i + 1) * c]);
                    }
                    off += c;
                }
                self.push(Op::Concat(ids, 1), vec![rows, total], data)
            }
            _ => panic!("contract violation: concat axis {axis}"),
        }
    }

    /// Stacks rank-1 vectors of equal length into a rank-2 tensor.
    pub fn stack_rows(&mut self, rows: &[&Tensor<S>]) -> Tensor<S> {
        assert!(!rows.is_empty(), "contract violation: stack of no rows");
        let n = rows[0].len();
        let ids: Vec<usize> = rows.iter().map(|t| {
            assert_eq!(t.rank(), 1, "contract violation: stack_rows expects vectors");
            assert_eq!(t.len(), n, "contract violation: stack_rows length mismatch");
            self.nid(t)
        }).collect();
        let mut data = Vec::with_capacity(rows.len() * n);
        for t in rows {
            data.extend_from_slice(t.data());
        }
        let m = rows.len();
        self.push(Op::StackRows(ids), vec![m, n], data)
    }

    /// Extracts row `i` of a rank-2 tensor as a vector.
    pub fn row(&mut self, a: &Tensor<S>, i: usize) -> Tensor<S> {
        let (m, n) = self.rows_cols(a, "row");
        assert!(i < m, "contract violation: row {i} of {m}");
        let ia = self.nid(a);
        let data = a.data()[i * n..(i + 1) * n].to_vec();
        self.push(Op::Row(ia, i), vec![n], data)
    }

    /// Contiguous slice along an axis (axis 0 of vectors/matrices, axis 1 of
    /// matrices).
    pub fn narrow(&mut self, a: &Tensor<S>, axis: usize, start: usize, len: usize) -> Tensor<S> {
        let ia = self.nid(a);
        match (a.rank(), axis) {
            (1, 0) => {
                assert!(
                    start + len <= a.shape()[0],
                    "contract violation: narrow [{start}, {start}+{len}) of {:?}",
                    a.shape()
                );
                let data = a.data()[start..start + len].to_vec();
                self.push(Op::Narrow { a: ia, axis, start, len }, vec![len], data)
            }
            (2, 0) => {
                let (m, n) = (a.shape()[0], a.shape()[1]);
                assert!(start + len <= m, "contract violation: narrow rows of {:?}", a.shape());
                let data = a.data()[start * n..(start + len) * n].to_vec();
                self.push(Op::Narrow { a: ia, axis, start, len }, vec![len, n], data)
            }
            (2, 1) => {
                let (m, n) = (a.shape()[0], a.shape()[1]);
                assert!(start + len <= n, "contract violation: narrow cols of {:?}", a.shape());
                let mut data = Vec::with_capacity(m * len);
                for i in 0..m {
                    data.extend_from_slice(&a.data()[i * n + start..i * n + start + len]);
                }
                self.push(Op::Narrow { a: ia, axis, start, len }, vec![m, len], data)
            }
            (r, ax) => panic!("contract violation: narrow axis {ax} of rank-{r} tensor"),
        }
    }

    pub fn reshape(&mut self, a: &Tensor<S>, shape: Vec<usize>) -> Tensor<S> {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            a.len(),
            "contract violation: reshape {:?} -> {:?}",
            a.shape(),
            shape
        );
        let ia = self.nid(a);
        self.push(Op::Reshape(ia), shape, a.data().to_vec())
    }

    /// x[k] . w[k x n] + b[n] -> [n]
    pub fn linear_vec(&mut self, x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
        assert_eq!(x.rank(), 1, "contract violation: linear_vec input shape {:?}", x.shape());
        let xm = self.reshape(x, vec![1, x.len()]);
        let y = self.matmul(&xm, w);
        let y = self.add_row(&y, b);
        let n = y.shape()[1];
        self.reshape(&y, vec![n])
    }

    /// x[m x k] . w[k x n] + b[n] broadcast over rows.
    pub fn linear(&mut self, x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
        let y = self.matmul(x, w);
        self.add_row(&y, b)
    }

    /// Reverse sweep from a scalar loss. Visits nodes in reverse creation
    /// order, so each node's adjoint is complete before it propagates.
    pub fn backward(&self, loss: &Tensor<S>) -> Backprop<S> {
        let root = loss.node.expect("contract violation: loss was not recorded on a tape");
        assert_eq!(root.tape, self.id, "contract violation: loss from a different tape");
        assert_eq!(
            loss.len(),
            1,
            "contract violation: backward from non-scalar loss of shape {:?}",
            loss.shape()
        );
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.node] = Some(vec![S::one()]);

        for id in (0..=root.node).rev() {
            let g = match grads[id].clone() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(id, &g, &mut grads);
        }
        Backprop { tape_id: self.id, grads }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<S>>], id: usize, delta: &[S]) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let slot = grads[id].get_or_insert_with(|| vec![S::zero(); self.nodes[id].data.len()]);
        for (s, &d) in slot.iter_mut().zip(delta) {
            *s = *s + d;
        }
    }

    fn accumulate_with(
        &self,
        grads: &mut [Option<Vec<S>>],
        id: usize,
        f: impl Fn(&mut Vec<S>),
    ) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let slot = grads[id].get_or_insert_with(|| vec![S::zero(); self.nodes[id].data.len()]);
        f(slot);
    }

    fn backprop_node(&self, id: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[id];
        let val = |i: usize| -> &[S] { &self.nodes[i].data };
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g);
                self.accumulate_with(grads, *b, |slot| {
                    for (s, &gv) in slot.iter_mut().zip(g) {
                        *s = *s - gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.accumulate_with(grads, *a, |slot| {
                    for i in 0..slot.len() {
                        slot[i] = slot[i] + g[i] * vb[i];
                    }
                });
                self.accumulate_with(grads, *b, |slot| {
                    for i in 0..slot.len() {
                        slot[i] = slot[i] + g[i] * va[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.accumulate_with(grads, *a, |slot| {
                    for i in 0..slot.len() {
                        slot[i] = slot[i] + g[i] / vb[i];
                    }
                });
                self.accumulate_with(grads, *b, |slot| {
                    for i in 0..slot.len() {
                        slot[i] = slot[i] - g[i] * va[i] / (vb[i] * vb[i]);
                    }
                });
            }
            Op::Neg(a) => {
                self.accumulate_with(grads, *a, |slot| {
                    for (s, &gv) in slot.iter_mut().zip(g) {
                        *s = *s - gv;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate_with(grads, *a, |slot| {
                    for (s, &gv) in slot.iter_mut().zip(g) {
                        *s = *s + gv * c;
                    }
                });
            }
            Op::Shift(a, _) | Op::Reshape(a) => {
                self.accumulate(grads, *a, g);
            }
            Op::AddRow(m, r) => {
                self.accumulate(grads, *m, g);
                let cols = self.nodes[*r].data.len();
                let rows = g.len() / cols;
                self.accumulate_with(grads, *r, |slot| {
                    for i in 0..rows {
                        for j in 0..cols {
                            slot[j] = slot[j] + g[i * cols + j];
                        }
                    }
                });
            }
            Op::MulRow(m, r) => {
                let vr = val(*r);
                let vm = val(*m);
                let cols = vr.len();
                let rows = vm.len() / cols;
                self.accumulate_with(grads, *m, |slot| {
                    for i in 0..rows {
                        for j in 0..cols {
                            slot[i * cols + j] = slot[i * cols + j] + g[i * cols + j] * vr[j];
                        }
                    }
                });
                self.accumulate_with(grads, *r, |slot| {
                    for i in 0..rows {
                        for j in 0..cols {
                            slot[j] = slot[j] + g[i * cols + j] * vm[i * cols + j];
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[*a].shape[0], self.nodes[*a].shape[1]);
                let n = self.nodes[*b].shape[1];
                let (va, vb) = (val(*a), val(*b));
                // dA = G . B^T
                let da = k_matmul_abt(g, vb, m, n, k);
                self.accumulate(grads, *a, &da);
                // dB = A^T . G
                let db = k_matmul_atb(va, g, m, k, n);
                self.accumulate(grads, *b, &db);
            }
            Op::MatMulAbt(a, b) => {
                let (m, k) = (self.nodes[*a].shape[0], self.nodes[*a].shape[1]);
                let n = self.nodes[*b].shape[0];
                let (va, vb) = (val(*a), val(*b));
                // C = A . B^T: dA = G . B, dB = G^T . A
                let da = k_matmul(g, vb, m, n, k);
                self.accumulate(grads, *a, &da);
                let db = k_matmul_atb(g, va, m, n, k);
                self.accumulate(grads, *b, &db);
            }
            Op::Sigmoid(_) | Op::Tanh(_) | Op::Exp(_) | Op::Sqrt(_) => {
                let out = &node.data;
                let a = self.op_inputs(&node.op)[0];
                let op = node.op.clone();
                self.accumulate_with(grads, a, |slot| {
                    for i in 0..slot.len() {
                        let y = out[i];
                        let d = match op {
                            Op::Sigmoid(_) => y * (S::one() - y),
                            Op::Tanh(_) => S::one() - y * y,
                            Op::Exp(_) => y,
                            Op::Sqrt(_) => S::of(0.5) / y,
                            _ => unreachable!(),
                        };
                        slot[i] = slot[i] + g[i] * d;
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let vx = val(*a);
                let slope = *slope;
                self.accumulate_with(grads, *a, |slot| {
                    for i in 0..slot.len() {
                        let d = if vx[i] > S::zero() { S::one() } else { slope };
                        slot[i] = slot[i] + g[i] * d;
                    }
                });
            }
            Op::Ln(a) => {
                let vx = val(*a);
                self.accumulate_with(grads, *a, |slot| {
                    for i in 0..slot.len() {
                        slot[i] = slot[i] + g[i] / vx[i];
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let vx = val(*a);
                let (lo, hi) = (*lo, *hi);
                self.accumulate_with(grads, *a, |slot| {
                    for i in 0..slot.len() {
                        if vx[i] > lo && vx[i] < hi {
                            slot[i] = slot[i] + g[i];
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let s = &node.data;
                let width = *node.shape.last().expect("softmax output has a last axis");
                let lanes = s.len() / width;
                self.accumulate_with(grads, *a, |slot| {
                    for l in 0..lanes {
                        let base = l * width;
                        let mut dot = S::zero();
                        for j in 0..width {
                            dot = dot + g[base + j] * s[base + j];
                        }
                        for j in 0..width {
                            slot[base + j] = slot[base + j] + s[base + j] * (g[base + j] - dot);
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let gv = g[0];
                self.accumulate_with(grads, *a, |slot| {
                    for s in slot.iter_mut() {
                        *s = *s + gv;
                    }
                });
            }
            Op::Mean(a) => {
                let n = self.nodes[*a].data.len();
                let gv = g[0] / S::of(n as f64);
                self.accumulate_with(grads, *a, |slot| {
                    for s in slot.iter_mut() {
                        *s = *s + gv;
                    }
                });
            }
            Op::MeanRows(a) => {
                let (m, n) = (self.nodes[*a].shape[0], self.nodes[*a].shape[1]);
                let inv = S::one() / S::of(m as f64);
                self.accumulate_with(grads, *a, |slot| {
                    for i in 0..m {
                        for j in 0..n {
                            slot[i * n + j] = slot[i * n + j] + g[j] * inv;
                        }
                    }
                });
            }
            Op::Concat(parts, axis) => match axis {
                0 => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.nodes[p].data.len();
                        self.accumulate(grads, p, &g[off..off + len]);
                        off += len;
                    }
                }
                _ => {
                    let rows = node.shape[0];
                    let total = node.shape[1];
                    let mut off = 0;
                    for &p in parts {
                        let c = self.nodes[p].shape[1];
                        self.accumulate_with(grads, p, |slot| {
                            for i in 0..rows {
                                for j in 0..c {
                                    slot[i * c + j] = slot[i * c + j] + g[i * total + off + j];
                                }
                            }
                        });
                        off += c;
                    }
                }
            },
            Op::StackRows(parts) => {
                let n = node.shape[1];
                for (i, &p) in parts.iter().enumerate() {
                    self.accumulate(grads, p, &g[i * n..(i + 1) * n]);
                }
            }
            Op::Row(a, i) => {
                let n = node.shape[0];
                let i = *i;
                self.accumulate_with(grads, *a, |slot| {
                    for j in 0..n {
                        slot[i * n + j] = slot[i * n + j] + g[j];
                    }
                });
            }
            Op::Narrow { a, axis, start, len } => {
                let src_shape = self.nodes[*a].shape.clone();
                let (axis, start, len) = (*axis, *start, *len);
                self.accumulate_with(grads, *a, |slot| match (src_shape.len(), axis) {
                    (1, 0) => {
                        for j in 0..len {
                            slot[start + j] = slot[start + j] + g[j];
                        }
                    }
                    (2, 0) => {
                        let n = src_shape[1];
                        for i in 0..len {
                            for j in 0..n {
                                slot[(start + i) * n + j] = slot[(start + i) * n + j] + g[i * n + j];
                            }
                        }
                    }
                    _ => {
                        let (m, n) = (src_shape[0], src_shape[1]);
                        for i in 0..m {
                            for j in 0..len {
                                slot[i * n + start + j] = slot[i * n + start + j] + g[i * len + j];
                            }
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;
    use crate::numerics::SplitRng;

    #[test]
    fn gradient_of_sum_of_squares_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::new(vec![3], vec![1.0, 2.0, 3.0]));
        let sq = tape.mul(&x, &x);
        let loss = tape.sum(&sq);
        let bp = tape.backward(&loss);
        assert_eq!(bp.grad(&x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn unreached_parameter_gets_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::new(vec![2], vec![1.0, 2.0]));
        let y = tape.param(&Tensor::new(vec![2], vec![3.0, 4.0]));
        let loss = tape.sum(&x);
        let bp = tape.backward(&loss);
        assert_eq!(bp.grad(&x).unwrap(), &[1.0, 1.0]);
        assert!(bp.grad(&y).is_none());
    }

    #[test]
    #[should_panic(expected = "non-scalar loss")]
    fn backward_from_vector_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::new(vec![2], vec![1.0, 2.0]));
        let y = tape.scale(&x, 2.0);
        let _ = tape.backward(&y);
    }

    #[test]
    #[should_panic(expected = "matmul inner dims")]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::new(vec![2, 3], vec![0.0; 6]));
        let b = tape.constant(&Tensor::new(vec![2, 2], vec![0.0; 4]));
        let _ = tape.matmul(&a, &b);
    }

    #[test]
    #[should_panic(expected = "used on tape")]
    fn cross_tape_use_is_rejected() {
        let mut t1 = Tape::<f64>::new();
        let mut t2 = Tape::<f64>::new();
        let x = t1.param(&Tensor::new(vec![1], vec![1.0]));
        let _ = t2.sum(&x);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_match_shift() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]));
        let s = tape.softmax_rows(&x);
        for l in 0..2 {
            let sum: f64 = s.data()[l * 3..(l + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        let shifted = tape.shift(&x, 100.0);
        let s2 = tape.softmax_rows(&shifted);
        for (a, b) in s.data().iter().zip(s2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Analytic gradients of a small MLP against central finite differences
    /// (independent oracle; tolerance 1e-7 on O(1) values).
    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = SplitRng::new(17);
        let w0 = Tensor::rand_uniform(vec![3, 4], 0.7, &mut rng);
        let x0 = Tensor::rand_uniform(vec![2, 3], 1.0, &mut rng);
        let b0 = Tensor::rand_uniform(vec![4], 0.5, &mut rng);

        let run = |wd: &[f64]| -> (f64, Vec<f64>) {
            let mut tape = Tape::new();
            let w = tape.param(&Tensor::new(vec![3, 4], wd.to_vec()));
            let x = tape.constant(&x0);
            let b = tape.param(&b0);
            let h = tape.linear(&x, &w, &b);
            let h = tape.leaky_relu(&h, 0.1);
            let s = tape.sigmoid(&h);
            let sm = tape.softmax_rows(&h);
            let joined = tape.mul(&s, &sm);
            let loss = tape.mean(&joined);
            let bp = tape.backward(&loss);
            (loss.item(), bp.grad(&w).unwrap().to_vec())
        };

        let (_, analytic) = run(w0.data());
        let mut f = |xs: &[f64]| run(xs).0;
        let numeric = finite_diff_grad(&mut f, w0.data(), 1e-6);
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            assert!(
                (a - n).abs() <= 1e-7 * f64::max(1.0, f64::max(a.abs(), n.abs())),
                "coordinate {i}: analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn structural_op_gradients_match_finite_differences() {
        let x0 = Tensor::new(vec![6], vec![0.3, -0.7, 1.2, 0.05, -0.4, 0.9]);
        let run = |xd: &[f64]| -> (f64, Vec<f64>) {
            let mut tape = Tape::new();
            let x = tape.param(&Tensor::new(vec![6], xd.to_vec()));
            let m = tape.reshape(&x, vec![2, 3]);
            let r0 = tape.row(&m, 0);
            let r1 = tape.row(&m, 1);
            let stacked = tape.stack_rows(&[&r1, &r0, &r0]);
            let sliced = tape.narrow(&stacked, 1, 1, 2);
            let pooled = tape.mean_rows(&sliced);
            let joined = tape.concat(&[&pooled, &r0], 0);
            let t = tape.tanh(&joined);
            let loss = tape.sum(&t);
            let bp = tape.backward(&loss);
            (loss.item(), bp.grad(&x).unwrap().to_vec())
        };
        let (_, analytic) = run(x0.data());
        let mut f = |xs: &[f64]| run(xs).0;
        let numeric = finite_diff_grad(&mut f, x0.data(), 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-8, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn div_clamp_ln_gradients_match_finite_differences() {
        let x0 = Tensor::new(vec![4], vec![0.8, 1.9, 0.6, 2.5]);
        let run = |xd: &[f64]| -> (f64, Vec<f64>) {
            let mut tape = Tape::new();
            let x = tape.param(&Tensor::new(vec![4], xd.to_vec()));
            let c = tape.clamp(&x, 0.1, 2.0);
            let e = tape.exp(&x);
            let q = tape.div(&c, &e);
            let l = tape.ln(&e);
            let s = tape.sqrt(&e);
            let sum1 = tape.add(&q, &l);
            let sum2 = tape.add(&sum1, &s);
            let loss = tape.mean(&sum2);
            let bp = tape.backward(&loss);
            (loss.item(), bp.grad(&x).unwrap().to_vec())
        };
        let (_, analytic) = run(x0.data());
        let mut f = |xs: &[f64]| run(xs).0;
        let numeric = finite_diff_grad(&mut f, x0.data(), 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-6 * a.abs().max(1.0), "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn matmul_abt_gradients_match_finite_differences() {
        let a0 = Tensor::new(vec![6], vec![0.2, -0.5, 0.7, 0.1, -0.3, 0.4]);
        let run = |ad: &[f64]| -> (f64, Vec<f64>) {
            let mut tape = Tape::new();
            let a = tape.param(&Tensor::new(vec![6], ad.to_vec()));
            let m = tape.reshape(&a, vec![2, 3]);
            let prod = tape.matmul_abt(&m, &m);
            let sm = tape.softmax_rows(&prod);
            let loss = tape.mean(&sm);
            let bp = tape.backward(&loss);
            (loss.item(), bp.grad(&a).unwrap().to_vec())
        };
        let (_, analytic) = run(a0.data());
        let mut f = |xs: &[f64]| run(xs).0;
        let numeric = finite_diff_grad(&mut f, a0.data(), 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-8, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn bound_params_collect_zeros_for_unreached_entries() {
        let mut rng = SplitRng::new(1);
        let mut params = ParamSet::<f64>::new();
        params.add_uniform("used.w", vec![2, 2], 2, &mut rng);
        params.add_zeros("unused.b", vec![3]);
        let mut tape = Tape::new();
        let bound = tape.bind(&params);
        let w = bound.get("used.w");
        let sq = tape.mul(w, w);
        let loss = tape.sum(&sq);
        let bp = tape.backward(&loss);
        let grads = bound.gradients(&bp);
        assert_eq!(grads.map["unused.b"], vec![0.0; 3]);
        assert_eq!(grads.map["used.w"].len(), 4);
        assert!(grads.map["used.w"].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn frozen_bind_blocks_gradients_but_passes_values() {
        let mut rng = SplitRng::new(2);
        let mut params = ParamSet::<f64>::new();
        params.add_uniform("w", vec![2, 2], 2, &mut rng);
        let mut tape = Tape::new();
        let bound = tape.bind_frozen(&params);
        let w = bound.get("w");
        assert_eq!(w.data(), params.get("w").data());
        let sq = tape.mul(w, w);
        let loss = tape.sum(&sq);
        let bp = tape.backward(&loss);
        let grads = bound.gradients(&bp);
        assert_eq!(grads.map["w"], vec![0.0; 4]);
    }

    #[test]
    fn generic_tape_works_in_f32() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(&Tensor::new(vec![2], vec![1.0f32, 2.0]));
        let y = tape.mul(&x, &x);
        let loss = tape.sum(&y);
        let bp = tape.backward(&loss);
        assert_eq!(bp.grad(&x).unwrap(), &[2.0f32, 4.0]);
    }
}
