//! Full-covariance Gaussian mixture fitted by EM over latent codes with the
//! one-hot label vector appended, plus the training population counts that
//! back the generation guards.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile_store::{Condition, LabelLayout, LabelVector, LABEL_DIM};

/// Added to every covariance diagonal in each M-step.
pub const COVARIANCE_REG: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub components: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the mean log-likelihood improves by less than `tol * |ll|`.
    pub tol: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig { components: 10, seed: 0, max_iters: 200, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    cholesky: Vec<DMatrix<f64>>,
}

impl GaussianMixture {
    /// Builds a mixture from weights, means and lower Cholesky factors.
    pub fn from_cholesky(weights: Vec<f64>, means: Vec<DVector<f64>>, cholesky: Vec<DMatrix<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || cholesky.len() != k {
            return Err(Error::Mixture("component counts disagree".into()));
        }
        let d = means[0].len();
        if means.iter().any(|m| m.len() != d) || cholesky.iter().any(|l| l.shape() != (d, d)) {
            return Err(Error::Mixture("component dimensions disagree".into()));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Mixture(format!("weights must form a simplex (sum {sum})")));
        }
        if cholesky.iter().any(|l| (0..d).any(|i| !(l[(i, i)] > 0.0))) {
            return Err(Error::Mixture("cholesky factors need a positive diagonal".into()));
        }
        let covariances = cholesky.iter().map(|l| l * l.transpose()).collect();
        Ok(GaussianMixture { weights, means, covariances, cholesky })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    pub fn cholesky_factors(&self) -> &[DMatrix<f64>] {
        &self.cholesky
    }

    /// Free parameters: means, symmetric covariances and K-1 weights.
    pub fn parameter_count(&self) -> usize {
        let (k, d) = (self.components(), self.dim());
        k * d + k * d * (d + 1) / 2 + k - 1
    }

    /// Per-row log N(x | mu_k, Sigma_k), one column per component.
    fn component_log_densities(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, d) = data.shape();
        let cols: Vec<Vec<f64>> = (0..self.components())
            .into_par_iter()
            .map(|k| {
                let l = &self.cholesky[k];
                let mut centered = data.transpose();
                for mut c in centered.column_iter_mut() {
                    c -= &self.means[k];
                }
                let solved = l.solve_lower_triangular(&centered).expect("positive diagonal");
                let log_det: f64 = (0..d).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
                let norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
                solved.column_iter().map(|c| norm - 0.5 * c.norm_squared()).collect()
            })
            .collect();
        DMatrix::from_fn(n, self.components(), |i, k| cols[k][i])
    }

    /// Mean log-likelihood per row and the responsibilities matrix.
    fn e_step(&self, data: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let mut logp = self.component_log_densities(data);
        let log_w: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        let mut total = 0.0;
        for i in 0..logp.nrows() {
            let mut row_max = f64::NEG_INFINITY;
            for k in 0..logp.ncols() {
                logp[(i, k)] += log_w[k];
                row_max = row_max.max(logp[(i, k)]);
            }
            let s: f64 = (0..logp.ncols()).map(|k| (logp[(i, k)] - row_max).exp()).sum();
            let lse = row_max + s.ln();
            total += lse;
            for k in 0..logp.ncols() {
                logp[(i, k)] = (logp[(i, k)] - lse).exp();
            }
        }
        (total / data.nrows() as f64, logp)
    }

    pub fn mean_log_likelihood(&self, data: &DMatrix<f64>) -> Result<f64> {
        if data.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!("data width {} vs mixture {}", data.ncols(), self.dim())));
        }
        Ok(self.e_step(data).0)
    }

    /// Bayesian information criterion on `data` (lower is better).
    pub fn bic(&self, data: &DMatrix<f64>) -> Result<f64> {
        let n = data.nrows() as f64;
        Ok(-2.0 * n * self.mean_log_likelihood(data)? + self.parameter_count() as f64 * n.ln())
    }

    /// Draws `n` rows: component by weight, then `mu + L * eps`.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(n, d);
        let mut eps = DVector::zeros(d);
        for i in 0..n {
            let k = self.pick_component(rng.random());
            for e in eps.iter_mut() {
                *e = StandardNormal.sample(rng);
            }
            let x = &self.means[k] + &self.cholesky[k] * &eps;
            out.row_mut(i).copy_from(&x.transpose());
        }
        out
    }

    fn pick_component(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }
}

/// Weighted mean/covariance update for one component; `None` when the
/// component has no responsibility mass left.
fn m_step_component(data: &DMatrix<f64>, resp: &[f64]) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
    let nk: f64 = resp.iter().sum();
    if nk < 1e-12 {
        return None;
    }
    let d = data.ncols();
    let mut mean = DVector::zeros(d);
    for (i, r) in resp.iter().enumerate() {
        if *r != 0.0 {
            mean.axpy(*r, &data.row(i).transpose(), 1.0);
        }
    }
    mean /= nk;
    let mut weighted = data.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        let s = resp[i].sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean[j]) * s;
        }
    }
    let mut cov = weighted.transpose() * &weighted / nk;
    cov = (&cov + cov.transpose()) * 0.5;
    for j in 0..d {
        cov[(j, j)] += COVARIANCE_REG;
    }
    Some((nk, mean, cov))
}

fn cholesky_lower(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Cholesky::<f64, Dyn>::new(cov.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::Mixture("covariance not positive definite".into()))
}

fn m_step(data: &DMatrix<f64>, resp: &DMatrix<f64>, prev: Option<&GaussianMixture>) -> Result<GaussianMixture> {
    let n = data.nrows() as f64;
    let k = resp.ncols();
    let updates: Vec<Option<(f64, DVector<f64>, DMatrix<f64>)>> = (0..k)
        .into_par_iter()
        .map(|c| {
            let r: Vec<f64> = resp.column(c).iter().copied().collect();
            m_step_component(data, &r)
        })
        .collect();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covariances = Vec::with_capacity(k);
    for (c, u) in updates.into_iter().enumerate() {
        match (u, prev) {
            (Some((nk, mean, cov)), _) => {
                weights.push(nk / n);
                means.push(mean);
                covariances.push(cov);
            }
            (None, Some(p)) => {
                weights.push(0.0);
                means.push(p.means[c].clone());
                covariances.push(p.covariances[c].clone());
            }
            (None, None) => return Err(Error::Mixture(format!("component {c} received no points"))),
        }
    }
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    let cholesky = covariances.iter().map(cholesky_lower).collect::<Result<Vec<_>>>()?;
    Ok(GaussianMixture { weights, means, covariances, cholesky })
}

/// k-means++ seeding followed by nearest-centre hard assignment.
fn kmeans_pp_responsibilities(data: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = data.nrows();
    let dist2 = |i: usize, c: &DVector<f64>| -> f64 { (0..data.ncols()).map(|j| (data[(i, j)] - c[j]).powi(2)).sum() };
    let mut centers: Vec<DVector<f64>> = vec![data.row(rng.random_range(0..n)).transpose()];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(i, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, d) in nearest.iter().enumerate() {
            if target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = data.row(pick).transpose();
        for (i, nd) in nearest.iter_mut().enumerate() {
            *nd = nd.min(dist2(i, &c));
        }
        centers.push(c);
    }
    let mut resp = DMatrix::zeros(n, k);
    for i in 0..n {
        let best = (0..k)
            .map(|c| (c, dist2(i, &centers[c])))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        resp[(i, best.0)] = 1.0;
    }
    resp
}

/// Fits a K-component full-covariance mixture by EM. Returns the mixture and
/// the mean log-likelihood after every E-step.
pub fn fit_gmm(data: &DMatrix<f64>, cfg: &GmmConfig) -> Result<(GaussianMixture, Vec<f64>)> {
    let (n, d) = data.shape();
    let k = cfg.components;
    if k == 0 || d == 0 {
        return Err(Error::InvalidArgument("need at least one component and one dimension".into()));
    }
    if n < 10 * k {
        return Err(Error::Mixture(format!("{n} points is fewer than 10 per component for K={k}")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mixture training data".into()));
    }
    if (1..n).all(|i| data.row(i) == data.row(0)) {
        return Err(Error::Mixture("all points identical".into()));
    }

    let resp = if k == 1 {
        DMatrix::from_element(n, 1, 1.0)
    } else {
        kmeans_pp_responsibilities(data, k, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
    };
    let mut gmm = m_step(data, &resp, None)?;
    let mut trace = Vec::new();
    loop {
        let (ll, resp) = gmm.e_step(data);
        let converged = trace
            .last()
            .is_some_and(|&prev: &f64| ll - prev < cfg.tol * prev.abs().max(1.0));
        trace.push(ll);
        if k == 1 || converged || trace.len() > cfg.max_iters {
            break;
        }
        gmm = m_step(data, &resp, Some(&gmm))?;
    }
    Ok((gmm, trace))
}

/// Training-population household counts per label combination.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Population {
    counts: BTreeMap<LabelVector, usize>,
    total_households: usize,
}

impl Population {
    pub fn new(counts: BTreeMap<LabelVector, usize>) -> Self {
        let total_households = counts.values().sum();
        Population { counts, total_households }
    }

    pub fn counts(&self) -> &BTreeMap<LabelVector, usize> {
        &self.counts
    }

    pub fn total_households(&self) -> usize {
        self.total_households
    }

    pub fn matching_households(&self, condition: &Condition) -> usize {
        self.counts.iter().filter(|(l, _)| condition.matches(l)).map(|(_, n)| n).sum()
    }

    pub fn fraction(&self, condition: &Condition) -> f64 {
        if self.total_households == 0 {
            return 0.0;
        }
        self.matching_households(condition) as f64 / self.total_households as f64
    }
}

/// Mixture over `[latent | one-hot labels]` rows with the label layout and
/// the training population it was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMixture {
    pub gmm: GaussianMixture,
    pub latent_dim: usize,
    pub label_layout: LabelLayout,
    pub population: Population,
}

impl LatentMixture {
    pub fn new(gmm: GaussianMixture, latent_dim: usize, population: Population) -> Result<Self> {
        if gmm.dim() != latent_dim + LABEL_DIM {
            return Err(Error::DimensionMismatch(format!(
                "mixture dimension {} is not latent {latent_dim} + labels {LABEL_DIM}",
                gmm.dim()
            )));
        }
        if population.total_households() == 0 {
            return Err(Error::InvalidArgument("population must contain households".into()));
        }
        Ok(LatentMixture { gmm, latent_dim, label_layout: LabelLayout::CANONICAL, population })
    }

    pub fn sample(&self, n: usize, seed: u64) -> DMatrix<f64> {
        self.gmm.sample(n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn population_fraction(&self, condition: &Condition) -> f64 {
        self.population.fraction(condition)
    }
}

/// Discretizes the label tail of a sampled row under `layout`.
pub fn decode_sampled_labels(row_tail: &[f64], layout: &LabelLayout) -> Result<LabelVector> {
    if !layout.is_canonical() {
        return Err(Error::DimensionMismatch(format!("unsupported label layout {layout:?}")));
    }
    LabelVector::decode(row_tail)
}
