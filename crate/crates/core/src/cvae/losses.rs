//! Batch losses: unbiased multi-bandwidth RBF MMD² and per-timestep
//! empirical-quantile matching, each with its gradient.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Quantiles matched by the quantile loss.
pub const QUANTILES: [f64; 3] = [0.05, 0.50, 0.95];

/// Minimum batch size for the quantile loss.
pub const MIN_QUANTILE_BATCH: usize = 8;

/// `{0.5, 1, 2, 4, 8} * sqrt(dim)`.
pub fn default_bandwidths(dim: usize) -> Vec<f64> {
    let root = (dim as f64).sqrt();
    [0.5, 1.0, 2.0, 4.0, 8.0].iter().map(|m| m * root).collect()
}

fn sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    (0..a.ncols()).map(|c| (a[(i, c)] - b[(j, c)]).powi(2)).sum()
}

/// `k(a, b) = sum_s exp(-|a - b|^2 / (2 s^2))` for a precomputed squared distance.
pub fn rbf_sum(d2: f64, bandwidths: &[f64]) -> f64 {
    bandwidths.iter().map(|s| (-d2 / (2.0 * s * s)).exp()).sum()
}

/// d k / d(d2).
fn rbf_sum_slope(d2: f64, bandwidths: &[f64]) -> f64 {
    bandwidths.iter().map(|s| -(-d2 / (2.0 * s * s)).exp() / (2.0 * s * s)).sum()
}

fn check_mmd_args(x: &DMatrix<f64>, y: &DMatrix<f64>, bandwidths: &[f64]) -> Result<()> {
    if x.nrows() < 2 || y.nrows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "MMD needs at least 2 samples per side, got {} and {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch(format!("MMD sample widths {} vs {}", x.ncols(), y.ncols())));
    }
    if bandwidths.is_empty() || bandwidths.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidArgument("bandwidths must be positive".into()));
    }
    Ok(())
}

/// Raw (unclamped) unbiased MMD² estimate.
fn mmd_raw(x: &DMatrix<f64>, y: &DMatrix<f64>, bandwidths: &[f64]) -> f64 {
    let (n, m) = (x.nrows() as f64, y.nrows() as f64);
    let within = |a: &DMatrix<f64>| {
        let mut s = 0.0;
        for i in 0..a.nrows() {
            for j in (i + 1)..a.nrows() {
                s += rbf_sum(sq_dist(a, i, a, j), bandwidths);
            }
        }
        2.0 * s
    };
    let mut cross = 0.0;
    for i in 0..x.nrows() {
        for j in 0..y.nrows() {
            cross += rbf_sum(sq_dist(x, i, y, j), bandwidths);
        }
    }
    within(x) / (n * (n - 1.0)) + within(y) / (m * (m - 1.0)) - 2.0 * cross / (n * m)
}

/// Unbiased MMD² between two sample sets, clamped at zero.
pub fn mmd_loss(x: &DMatrix<f64>, y: &DMatrix<f64>, bandwidths: &[f64]) -> Result<f64> {
    check_mmd_args(x, y, bandwidths)?;
    Ok(mmd_raw(x, y, bandwidths).max(0.0))
}

/// MMD² and its gradient with respect to the rows of `x`. The gradient is
/// zero wherever the clamp is active.
pub fn mmd_loss_grad(x: &DMatrix<f64>, y: &DMatrix<f64>, bandwidths: &[f64]) -> Result<(f64, DMatrix<f64>)> {
    check_mmd_args(x, y, bandwidths)?;
    let raw = mmd_raw(x, y, bandwidths);
    let mut grad = DMatrix::zeros(x.nrows(), x.ncols());
    if raw <= 0.0 {
        return Ok((0.0, grad));
    }
    let (n, m) = (x.nrows() as f64, y.nrows() as f64);
    let w_within = 2.0 / (n * (n - 1.0));
    let w_cross = 2.0 / (n * m);
    for i in 0..x.nrows() {
        for j in 0..x.nrows() {
            if i == j {
                continue;
            }
            // d|a-b|^2/da = 2(a-b)
            let slope = w_within * rbf_sum_slope(sq_dist(x, i, x, j), bandwidths) * 2.0;
            for c in 0..x.ncols() {
                grad[(i, c)] += slope * (x[(i, c)] - x[(j, c)]);
            }
        }
        for j in 0..y.nrows() {
            let slope = w_cross * rbf_sum_slope(sq_dist(x, i, y, j), bandwidths) * 2.0;
            for c in 0..x.ncols() {
                grad[(i, c)] -= slope * (x[(i, c)] - y[(j, c)]);
            }
        }
    }
    Ok((raw, grad))
}

/// Position in the sorted column and interpolation weight for quantile `q`
/// over `n` samples (linear interpolation between order statistics).
pub fn quantile_position(n: usize, q: f64) -> (usize, usize, f64) {
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    (lo, hi, h - lo as f64)
}

/// Linear-interpolation empirical quantile of an unsorted slice.
pub fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (lo, hi, frac) = quantile_position(s.len(), q);
    s[lo] + frac * (s[hi] - s[lo])
}

/// Column indices sorted by value, ties broken by row index.
fn argsort_column(m: &DMatrix<f64>, col: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..m.nrows()).collect();
    idx.sort_by(|&a, &b| m[(a, col)].total_cmp(&m[(b, col)]).then(a.cmp(&b)));
    idx
}

fn check_quantile_args(x: &DMatrix<f64>, xhat: &DMatrix<f64>, quantiles: &[f64]) -> Result<()> {
    if x.shape() != xhat.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", x.shape(), xhat.shape())));
    }
    if x.nrows() < MIN_QUANTILE_BATCH {
        return Err(Error::InvalidArgument(format!(
            "quantile loss needs a batch of at least {MIN_QUANTILE_BATCH}, got {}",
            x.nrows()
        )));
    }
    if quantiles.is_empty() || quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(Error::InvalidArgument("quantiles must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Mean absolute gap between per-column batch quantiles of `xhat` and `x`.
pub fn quantile_loss(x: &DMatrix<f64>, xhat: &DMatrix<f64>, quantiles: &[f64]) -> Result<f64> {
    quantile_loss_grad(x, xhat, quantiles).map(|(l, _)| l)
}

/// Quantile loss and its gradient with respect to `xhat`.
pub fn quantile_loss_grad(
    x: &DMatrix<f64>,
    xhat: &DMatrix<f64>,
    quantiles: &[f64],
) -> Result<(f64, DMatrix<f64>)> {
    check_quantile_args(x, xhat, quantiles)?;
    let (b, t) = x.shape();
    let norm = (t * quantiles.len()) as f64;
    let mut loss = 0.0;
    let mut grad = DMatrix::zeros(b, t);
    for col in 0..t {
        let real = argsort_column(x, col);
        let fake = argsort_column(xhat, col);
        for &q in quantiles {
            let (lo, hi, frac) = quantile_position(b, q);
            let qr = x[(real[lo], col)] + frac * (x[(real[hi], col)] - x[(real[lo], col)]);
            let qf = xhat[(fake[lo], col)] + frac * (xhat[(fake[hi], col)] - xhat[(fake[lo], col)]);
            let diff = qf - qr;
            loss += diff.abs();
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[(fake[lo], col)] += sign * (1.0 - frac) / norm;
            grad[(fake[hi], col)] += sign * frac / norm;
        }
    }
    Ok((loss / norm, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_differences, max_relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal_matrix(rows: usize, cols: usize, shift: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| shift + rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn identical_sets_have_zero_mmd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = normal_matrix(30, 4, 0.0, &mut rng);
        assert!(mmd_loss(&x, &x, &default_bandwidths(4)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn mmd_rejects_tiny_batches() {
        let x = DMatrix::zeros(1, 3);
        let y = DMatrix::zeros(5, 3);
        assert!(mmd_loss(&x, &y, &[1.0]).is_err());
        assert!(mmd_loss(&y, &DMatrix::zeros(5, 2), &[1.0]).is_err());
    }

    #[test]
    fn mmd_symmetric_and_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = normal_matrix(20, 3, 0.5, &mut rng);
        let y = normal_matrix(20, 3, 0.0, &mut rng);
        let bw = default_bandwidths(3);
        let a = mmd_loss(&x, &y, &bw).unwrap();
        assert!((a - mmd_loss(&y, &x, &bw).unwrap()).abs() < 1e-12);
        let perm: Vec<usize> = (0..20).rev().collect();
        let xp = DMatrix::from_fn(20, 3, |i, j| x[(perm[i], j)]);
        let yp = DMatrix::from_fn(20, 3, |i, j| y[(perm[i], j)]);
        assert!((a - mmd_loss(&xp, &yp, &bw).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mmd_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = normal_matrix(10, 3, 1.0, &mut rng);
        let y = normal_matrix(12, 3, 0.0, &mut rng);
        let bw = [0.7, 1.5, 3.0];
        let (_, g) = mmd_loss_grad(&x, &y, &bw).unwrap();
        let numeric = central_differences(x.as_slice(), 1e-5, |p| {
            mmd_loss(&DMatrix::from_column_slice(10, 3, p), &y, &bw).unwrap()
        });
        assert!(max_relative_error(g.as_slice(), &numeric) < 1e-6);
    }

    /// Permutation null of the MMD statistic computed by brute force.
    fn permutation_threshold(x: &DMatrix<f64>, y: &DMatrix<f64>, bw: &[f64], perms: usize, seed: u64) -> f64 {
        use rand::seq::SliceRandom;
        let n = x.nrows();
        let pooled = DMatrix::from_fn(n + y.nrows(), x.ncols(), |i, j| if i < n { x[(i, j)] } else { y[(i - n, j)] });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..pooled.nrows()).collect();
        let mut null: Vec<f64> = (0..perms)
            .map(|_| {
                idx.shuffle(&mut rng);
                let a = pooled.select_rows(&idx[..n]);
                let b = pooled.select_rows(&idx[n..]);
                mmd_loss(&a, &b, bw).unwrap()
            })
            .collect();
        null.sort_by(f64::total_cmp);
        null[(0.99 * (perms - 1) as f64).round() as usize]
    }

    #[test]
    fn mmd_two_sample_behaviour_against_permutation_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bw = default_bandwidths(2);
        let prior = normal_matrix(500, 2, 0.0, &mut rng);
        let same = normal_matrix(500, 2, 0.0, &mut rng);
        let shifted = normal_matrix(500, 2, 5.0, &mut rng);
        let thr_same = permutation_threshold(&same, &prior, &bw, 100, 5);
        assert!(mmd_loss(&same, &prior, &bw).unwrap() < thr_same);
        let thr_shift = permutation_threshold(&shifted, &prior, &bw, 100, 6);
        assert!(mmd_loss(&shifted, &prior, &bw).unwrap() > thr_shift);
    }

    #[test]
    fn quantile_loss_identity_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = normal_matrix(16, 48, 0.0, &mut rng);
        assert_eq!(quantile_loss(&x, &x, &QUANTILES).unwrap(), 0.0);
        let shifted = x.map(|v| v - 0.75);
        assert!((quantile_loss(&x, &shifted, &QUANTILES).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn quantile_loss_hand_computed_median() {
        // column values 1..9 -> median 5; constant 7 -> gap 2 for q=0.5.
        let x = DMatrix::from_fn(9, 1, |i, _| (i + 1) as f64);
        let xhat = DMatrix::from_element(9, 1, 7.0);
        assert_eq!(quantile_loss(&x, &xhat, &[0.5]).unwrap(), 2.0);
        assert_eq!(empirical_quantile(&[9.0, 1.0, 5.0, 3.0, 7.0, 2.0, 4.0, 6.0, 8.0], 0.5), 5.0);
        assert_eq!(empirical_quantile(&[0.0, 10.0], 0.25), 2.5);
    }

    #[test]
    fn quantile_loss_rejects_small_batch() {
        let x = DMatrix::zeros(7, 48);
        assert!(quantile_loss(&x, &x, &QUANTILES).is_err());
    }

    #[test]
    fn quantile_loss_invariant_to_separate_row_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = normal_matrix(12, 5, 0.0, &mut rng);
        let xhat = normal_matrix(12, 5, 0.3, &mut rng);
        let base = quantile_loss(&x, &xhat, &QUANTILES).unwrap();
        let p1 = [5, 3, 0, 11, 1, 2, 4, 10, 6, 9, 8, 7];
        let p2 = [11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0];
        let xp = DMatrix::from_fn(12, 5, |i, j| x[(p1[i], j)]);
        let xhp = DMatrix::from_fn(12, 5, |i, j| xhat[(p2[i], j)]);
        assert!((base - quantile_loss(&xp, &xhp, &QUANTILES).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn quantile_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = normal_matrix(10, 4, 0.0, &mut rng);
        let xhat = DMatrix::from_fn(10, 4, |i, j| 0.2 + (i as f64) * 0.37 - (j as f64) * 0.11 + rng.random_range(0.0..0.01));
        let (_, g) = quantile_loss_grad(&x, &xhat, &QUANTILES).unwrap();
        let numeric = central_differences(xhat.as_slice(), 1e-6, |p| {
            quantile_loss(&x, &DMatrix::from_column_slice(10, 4, p), &QUANTILES).unwrap()
        });
        assert!(max_relative_error(g.as_slice(), &numeric) < 1e-6);
    }
}
