/// Central-difference estimate of `d f / d x[index]`, perturbing in place and
/// restoring the original value afterwards.
pub fn central_difference<F>(x: &mut [f64], index: usize, eps: f64, mut f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = x[index];
    x[index] = orig + eps;
    let plus = f(x);
    x[index] = orig - eps;
    let minus = f(x);
    x[index] = orig;
    (plus - minus) / (2.0 * eps)
}

/// `|a - b| / max(|a|, |b|)`, or `0` when both are exactly zero.
///
/// Pure relative error is undefined near zero; values whose magnitudes are
/// both below `1e-10` compare by absolute difference instead.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-10 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}
