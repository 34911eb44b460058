//! Central finite-difference verification of analytic gradients.
//!
//! The checker is deliberately independent of the tape: it only needs a
//! black-box `f(x) -> loss` over a flat parameter vector, so it can verify
//! any differentiable path, including custom ops.

/// Relative error with a unit floor: `|a - b| / max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central finite difference of `eval` at `x0[idx]` with half-step `h`.
pub fn central_diff(eval: &dyn Fn(&[f64]) -> f64, x0: &[f64], idx: usize, h: f64) -> f64 {
    let mut x = x0.to_vec();
    x[idx] = x0[idx] + h;
    let plus = eval(&x);
    x[idx] = x0[idx] - h;
    let minus = eval(&x);
    (plus - minus) / (2.0 * h)
}

/// Maximum relative error between `analytic` and central finite differences
/// over the given indices. `analytic` must align with `x0`.
pub fn max_rel_err_at(
    eval: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    analytic: &[f64],
    indices: &[usize],
    h: f64,
) -> f64 {
    assert_eq!(x0.len(), analytic.len());
    let mut worst = 0.0f64;
    for &i in indices {
        let fd = central_diff(eval, x0, i, h);
        worst = worst.max(rel_err(analytic[i], fd));
    }
    worst
}

/// [`max_rel_err_at`] over every index.
pub fn max_rel_err(eval: &dyn Fn(&[f64]) -> f64, x0: &[f64], analytic: &[f64], h: f64) -> f64 {
    let indices: Vec<usize> = (0..x0.len()).collect();
    max_rel_err_at(eval, x0, analytic, &indices, h)
}

/// Deterministic index subsample: at most `max_count` indices evenly strided
/// across `len`.
pub fn strided_indices(len: usize, max_count: usize) -> Vec<usize> {
    if len <= max_count {
        return (0..len).collect();
    }
    let stride = len as f64 / max_count as f64;
    (0..max_count).map(|i| (i as f64 * stride) as usize).collect()
}
