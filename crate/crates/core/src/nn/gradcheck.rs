//! Finite-difference gradient verification.

/// Denominator floor for relative errors, so gradients that are zero in both
/// routes compare equal instead of dividing by zero.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

/// Central differences `(f(p + h e_i) - f(p - h e_i)) / 2h` for every coordinate.
pub fn central_differences(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let plus = f(&p);
            p[i] = orig - h;
            let minus = f(&p);
            p[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let g = central_differences(&[1.0, -2.0, 0.5], 1e-5, |p| p.iter().map(|x| x * x).sum());
        assert!(max_relative_error(&[2.0, -4.0, 1.0], &g) < 1e-9);
    }

    #[test]
    fn zero_both_is_zero_error() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
    }
}
