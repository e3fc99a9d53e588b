use crate::numerics::{BoundParams, Real, Tape, Tensor};

/// Scaled dot-product attention split over equal-width heads.
///
/// `q` is [r x d], `k` and `v` are [a x d], d divisible by `heads`. Each
/// head attends over its own d/heads-wide slice with logits scaled by
/// 1/sqrt(d/heads); head outputs are concatenated back to [r x d].
pub fn multi_head_attend<S: Real>(
    tape: &mut Tape<S>,
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    heads: usize,
) -> Tensor<S> {
    let d = q.shape()[1];
    assert_eq!(k.shape()[1], d, "contract violation: key width {:?} vs {d}", k.shape());
    assert_eq!(v.shape(), k.shape(), "contract violation: value shape {:?}", v.shape());
    assert!(
        heads > 0 && d % heads == 0,
        "contract violation: width {d} not divisible by {heads} heads"
    );
    let hw = d / heads;
    let scale = S::of(1.0 / (hw as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.narrow(q, 1, h * hw, hw);
        let kh = tape.narrow(k, 1, h * hw, hw);
        let vh = tape.narrow(v, 1, h * hw, hw);
        let logits = tape.matmul_abt(&qh, &kh);
        let logits = tape.scale(&logits, scale);
        let weights = tape.softmax_rows(&logits);
        outs.push(tape.matmul(&weights, &vh));
    }
    let refs: Vec<&Tensor<S>> = outs.iter().collect();
    tape.concat(&refs, 1)
}

/// Gated linear unit over attention output: two independent linear layers,
/// one passed through a sigmoid gate, combined elementwise.
pub fn glu_gate<S: Real>(
    tape: &mut Tape<S>,
    bound: &BoundParams<S>,
    prefix: &str,
    x: &Tensor<S>,
) -> Tensor<S> {
    let a = tape.linear(
        x,
        bound.get(&format!("{prefix}.gate_a.w")),
        bound.get(&format!("{prefix}.gate_a.b")),
    );
    let g = tape.linear(
        x,
        bound.get(&format!("{prefix}.gate_g.w")),
        bound.get(&format!("{prefix}.gate_g.b")),
    );
    let g = tape.sigmoid(&g);
    tape.mul(&a, &g)
}

/// Plain-f64 attention reference with explicit loops, for oracle tests.
#[cfg(test)]
pub fn brute_force_attend(q: &[f64], k: &[f64], v: &[f64], r: usize, a: usize, d: usize, heads: usize) -> Vec<f64> {
    let hw = d / heads;
    let mut out = vec![0.0; r * d];
    for h in 0..heads {
        for row in 0..r {
            let mut logits = vec![0.0; a];
            for (key, logit) in logits.iter_mut().enumerate() {
                let mut dot = 0.0;
                for j in 0..hw {
                    dot += q[row * d + h * hw + j] * k[key * d + h * hw + j];
                }
                *logit = dot / (hw as f64).sqrt();
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..hw {
                let mut acc = 0.0;
                for (key, e) in exps.iter().enumerate() {
                    acc += e / z * v[key * d + h * hw + j];
                }
                out[row * d + h * hw + j] = acc;
            }
        }
    }
    out
}
