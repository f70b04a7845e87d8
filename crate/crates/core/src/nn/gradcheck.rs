//! Central finite differences for checking analytic gradients in `f64`.

/// `(f(+h) - f(-h)) / 2h`, where `f` receives the signed perturbation.
pub fn central_difference(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// Relative error with a floor on the denominator so that entries which are
/// zero on both sides compare as equal.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Largest relative error between an analytic gradient vector and the
/// finite-difference gradient of `f` around `x`.
pub fn max_rel_error(
    analytic: &[f64],
    x: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let fd = central_difference(h, |d| {
            xp[i] = x[i] + d;
            let v = f(&xp);
            xp[i] = x[i];
            v
        });
        worst = worst.max(rel_error(analytic[i], fd));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let g = central_difference(1e-5, |h| (2.0 + h).powi(2));
        assert!((g - 4.0).abs() < 1e-8);
        assert!(max_rel_error(&[2.0, -6.0], &[1.0, -3.0], 1e-5, |x| x[0] * x[0] + x[1] * x[1]) < 1e-8);
    }
}
