use super::scalar::Real;

/// Central finite-difference gradient of a scalar function.
///
/// Independent of the tape: evaluates `f` at `x +- h e_i` per coordinate.
pub fn finite_diff_grad<S: Real>(f: &mut dyn FnMut(&[S]) -> S, x: &[S], h: f64) -> Vec<S> {
    let h = S::of(h);
    let two_h = h + h;
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        grad.push((up - down) / two_h);
    }
    grad
}

/// Compares analytic and numeric gradients coordinate by coordinate with a
/// mixed absolute/relative tolerance: |a - n| <= tol * max(1, |a|, |n|).
/// Returns the worst offending coordinate on failure.
pub fn grad_check<S: Real>(analytic: &[S], numeric: &[S], tol: f64) -> Result<(), String> {
    assert_eq!(
        analytic.len(),
        numeric.len(),
        "contract violation: gradient lengths {} vs {}",
        analytic.len(),
        numeric.len()
    );
    let tol = S::of(tol);
    let mut worst: Option<(usize, S)> = None;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let scale = S::one().max(a.abs()).max(n.abs());
        let err = (a - n).abs() / scale;
        if err > tol && worst.map_or(true, |(_, w)| err > w) {
            worst = Some((i, err));
        }
    }
    match worst {
        None => Ok(()),
        Some((i, err)) => Err(format!(
            "gradient mismatch at coordinate {i}: analytic {} vs numeric {} (rel err {err})",
            analytic[i], numeric[i]
        )),
    }
}
