//! Fidelity, utility and privacy reporting for generated profiles.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use chrono::{Days, NaiveDate};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cvae::{empirical_quantile, rbf_sum, CvaeModel};
use crate::error::{Error, Result};
use crate::generator::{generate, GenerationRequest, GenerationResult, GuardConfig};
use crate::latent_gmm::LatentMixture;
use crate::profile_store::{
    is_weekend, k_anonymity_audit, AuditReport, Condition, Dataset, LabelVector, NormalizationParams, LABEL_DIM, PERIODS,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const CURVE_QUANTILES: [f64; 5] = [0.05, 0.25, 0.50, 0.75, 0.95];
pub const MIN_CURVE_PROFILES: usize = 20;
pub const MIN_MMD_PROFILES: usize = 50;
pub const RIDGE_LAMBDA: f64 = 1e-3;
/// First date assigned to synthetic rows when a day type is needed.
pub const SYNTHETIC_START_DATE: NaiveDate = match NaiveDate::from_ymd_opt(2022, 1, 1) {
    Some(d) => d,
    None => unreachable!(),
};

/// Per-timestep linear-interpolation quantiles, one 48-vector per entry of `qs`.
pub fn quantile_curves(profiles: &[Vec<f64>], qs: &[f64]) -> Result<Vec<Vec<f64>>> {
    if profiles.len() < MIN_CURVE_PROFILES {
        return Err(Error::InvalidArgument(format!(
            "quantile curves need at least {MIN_CURVE_PROFILES} profiles, got {}",
            profiles.len()
        )));
    }
    check_widths(profiles)?;
    let columns: Vec<Vec<f64>> = (0..PERIODS).map(|t| profiles.iter().map(|p| p[t]).collect()).collect();
    Ok(qs.iter().map(|&q| columns.iter().map(|c| empirical_quantile(c, q)).collect()).collect())
}

fn check_widths(profiles: &[Vec<f64>]) -> Result<()> {
    match profiles.iter().find(|p| p.len() != PERIODS) {
        Some(p) => Err(Error::DimensionMismatch(format!("profile of length {}", p.len()))),
        None => Ok(()),
    }
}

/// Mean over timesteps of `|synthetic - real| / |real|`.
pub fn mean_relative_error(real: &[f64], synthetic: &[f64]) -> f64 {
    real.iter().zip(synthetic).map(|(r, s)| (s - r).abs() / r.abs()).sum::<f64>() / real.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdTest {
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
}

/// Bandwidths used for the fidelity test: `{0.5, 1, 2, 4, 8} * sqrt(48)`.
pub fn fidelity_bandwidths() -> Vec<f64> {
    crate::cvae::default_bandwidths(PERIODS)
}

/// Unbiased MMD² of the split `first | rest` of a pooled kernel matrix.
fn mmd_from_kernel(k: &DMatrix<f64>, order: &[usize], n: usize) -> f64 {
    let m = order.len() - n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, &i) in order.iter().enumerate() {
        for (b, &j) in order.iter().enumerate().skip(a + 1) {
            let v = k[(i, j)];
            match (a < n, b < n) {
                (true, true) => sxx += v,
                (false, false) => syy += v,
                _ => sxy += v,
            }
        }
    }
    let (n, m) = (n as f64, m as f64);
    2.0 * sxx / (n * (n - 1.0)) + 2.0 * syy / (m * (m - 1.0)) - 2.0 * sxy / (n * m)
}

/// Two-sample MMD permutation test in normalized space. The statistic is
/// the clamped unbiased MMD²; the p-value compares raw estimates against
/// `permutations` seeded relabelings, `(1 + #{perm >= obs}) / (1 + P)`.
pub fn fidelity_mmd(
    real: &[Vec<f64>],
    synthetic: &[Vec<f64>],
    norm: &NormalizationParams,
    permutations: usize,
    seed: u64,
) -> Result<MmdTest> {
    if real.len() < MIN_MMD_PROFILES || synthetic.len() < MIN_MMD_PROFILES {
        return Err(Error::InvalidArgument(format!(
            "MMD test needs at least {MIN_MMD_PROFILES} profiles per side, got {} and {}",
            real.len(),
            synthetic.len()
        )));
    }
    check_widths(real)?;
    check_widths(synthetic)?;
    let pooled: Vec<Vec<f64>> = real.iter().chain(synthetic).map(|p| norm.normalize(p)).collect();
    let total = pooled.len();
    let bw = fidelity_bandwidths();
    let rows: Vec<Vec<f64>> = (0..total)
        .into_par_iter()
        .map(|i| {
            (0..total)
                .map(|j| {
                    let d2: f64 = pooled[i].iter().zip(&pooled[j]).map(|(a, b)| (a - b).powi(2)).sum();
                    rbf_sum(d2, &bw)
                })
                .collect()
        })
        .collect();
    let k = DMatrix::from_fn(total, total, |i, j| rows[i][j]);
    let n = real.len();
    let identity: Vec<usize> = (0..total).collect();
    let observed = mmd_from_kernel(&k, &identity, n);
    let exceed = (0..permutations)
        .into_par_iter()
        .filter(|&p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64 + 1);
            let mut order = identity.clone();
            order.shuffle(&mut rng);
            mmd_from_kernel(&k, &order, n) >= observed
        })
        .count();
    Ok(MmdTest {
        statistic: observed.max(0.0),
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        permutations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub real: Vec<[f64; 2]>,
    pub synthetic: Vec<[f64; 2]>,
    /// Share of real-data variance captured by each of the two components.
    pub explained_variance_ratio: [f64; 2],
    pub eigenvalues: [f64; 2],
    pub components: [Vec<f64>; 2],
    pub mean: Vec<f64>,
}

/// PCA fitted on `real` only; `synthetic` is projected into the same basis.
/// Each component is signed so its largest-magnitude coordinate is positive.
pub fn pca_project(real: &[Vec<f64>], synthetic: &[Vec<f64>]) -> Result<PcaProjection> {
    if real.len() + synthetic.len() < 10 || real.len() < 2 {
        return Err(Error::InvalidArgument("PCA needs at least 10 profiles with 2 real".into()));
    }
    check_widths(real)?;
    check_widths(synthetic)?;
    let n = real.len() as f64;
    let mean: Vec<f64> = (0..PERIODS).map(|t| real.iter().map(|p| p[t]).sum::<f64>() / n).collect();
    let centered = DMatrix::from_fn(real.len(), PERIODS, |i, t| real[i][t] - mean[t]);
    let cov = centered.transpose() * &centered / n;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..PERIODS).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total_var: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let component = |c: usize| -> Vec<f64> {
        let v: Vec<f64> = eig.eigenvectors.column(order[c]).iter().copied().collect();
        let pivot = v.iter().copied().fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            v.iter().map(|x| -x).collect()
        } else {
            v
        }
    };
    let components = [component(0), component(1)];
    let project = |p: &Vec<f64>| -> [f64; 2] {
        let dot = |c: &Vec<f64>| p.iter().zip(&mean).zip(c).map(|((x, m), w)| (x - m) * w).sum::<f64>();
        [dot(&components[0]), dot(&components[1])]
    };
    let eigenvalues = [eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]];
    let ratio = |v: f64| if total_var > 0.0 { v.max(0.0) / total_var } else { 0.0 };
    Ok(PcaProjection {
        real: real.iter().map(project).collect(),
        synthetic: synthetic.iter().map(project).collect(),
        explained_variance_ratio: [ratio(eigenvalues[0]), ratio(eigenvalues[1])],
        eigenvalues,
        components,
        mean,
    })
}

/// Profiles with the regressors the forecaster needs.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledProfiles {
    pub profiles: Vec<Vec<f64>>,
    pub labels: Vec<LabelVector>,
    pub weekend: Vec<bool>,
}

impl LabeledProfiles {
    pub fn from_dataset(d: &Dataset) -> Self {
        LabeledProfiles {
            profiles: d.records().iter().map(|r| r.profile.readings().to_vec()).collect(),
            labels: d.records().iter().map(|r| r.labels).collect(),
            weekend: d.records().iter().map(|r| r.profile.is_weekend()).collect(),
        }
    }

    /// Generated rows get consecutive dates from [`SYNTHETIC_START_DATE`],
    /// which fix their day type.
    pub fn from_generated(g: &GenerationResult) -> Self {
        LabeledProfiles {
            profiles: g.profiles.clone(),
            labels: g.realized_labels.clone(),
            weekend: (0..g.profiles.len()).map(|i| is_weekend(synthetic_date(i))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    fn design(&self) -> DMatrix<f64> {
        let width = LABEL_DIM + 2;
        let mut x = DMatrix::zeros(self.len(), width);
        for i in 0..self.len() {
            for (j, v) in self.labels[i].encode_onehot().into_iter().enumerate() {
                x[(i, j)] = v;
            }
            x[(i, LABEL_DIM)] = f64::from(u8::from(self.weekend[i]));
            x[(i, LABEL_DIM + 1)] = 1.0;
        }
        x
    }

    fn targets(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), PERIODS, |i, t| self.profiles[i][t])
    }
}

pub fn synthetic_date(index: usize) -> NaiveDate {
    SYNTHETIC_START_DATE + Days::new(index as u64)
}

/// Ridge solution `(X'X + lambda I)^-1 X'Y`.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch(format!("{} design rows vs {} targets", x.nrows(), y.nrows())));
    }
    let mut gram = x.transpose() * x;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = x.transpose() * y;
    gram.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::InvalidArgument("ridge system is not positive definite".into()))
}

fn mean_absolute_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().mean()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TstrResult {
    pub mae_synthetic_trained: f64,
    pub mae_real_trained: f64,
    pub ratio: f64,
}

/// Trains the label/day-type ridge forecaster on real and on synthetic data
/// and scores both on `real_test`.
pub fn tstr(real_train: &Dataset, synthetic: &LabeledProfiles, real_test: &Dataset) -> Result<TstrResult> {
    let train_ids: BTreeSet<_> = real_train.households().into_iter().collect();
    if real_test.households().iter().any(|h| train_ids.contains(h)) {
        return Err(Error::InvalidArgument("test households overlap the training households".into()));
    }
    if real_train.is_empty() || real_test.is_empty() || synthetic.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_widths(&synthetic.profiles)?;
    let real = LabeledProfiles::from_dataset(real_train);
    let test = LabeledProfiles::from_dataset(real_test);
    let (xt, yt) = (test.design(), test.targets());
    let score = |set: &LabeledProfiles| -> Result<f64> {
        let beta = ridge_fit(&set.design(), &set.targets(), RIDGE_LAMBDA)?;
        Ok(mean_absolute_error(&(&xt * beta), &yt))
    };
    let mae_real_trained = score(&real)?;
    let mae_synthetic_trained = score(synthetic)?;
    Ok(TstrResult { mae_synthetic_trained, mae_real_trained, ratio: mae_synthetic_trained / mae_real_trained })
}

/// Structure-free baseline: each reading uniform on `[0, 2 * mean_t]` of the
/// reference data, labels drawn uniformly from the reference labels.
pub fn noise_baseline(reference: &Dataset, n: usize, seed: u64) -> LabeledProfiles {
    let real = LabeledProfiles::from_dataset(reference);
    let mean: Vec<f64> =
        (0..PERIODS).map(|t| real.profiles.iter().map(|p| p[t]).sum::<f64>() / real.len() as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut profiles = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        profiles.push(mean.iter().map(|m| rng.random_range(0.0..=2.0 * m)).collect());
        labels.push(real.labels[rng.random_range(0..real.len())]);
    }
    LabeledProfiles { profiles, labels, weekend: (0..n).map(|i| is_weekend(synthetic_date(i))).collect() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub synthetic_count: usize,
    /// Profiles drawn from each side for the MMD test.
    pub mmd_sample: usize,
    pub permutations: usize,
    pub k_anonymity: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { synthetic_count: 2000, mmd_sample: 300, permutations: 500, k_anonymity: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileCurves {
    pub quantiles: Vec<f64>,
    pub real: Vec<Vec<f64>>,
    pub synthetic: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub seed: u64,
    pub synthetic_count: usize,
    pub holdout_count: usize,
    pub quantile_curves: QuantileCurves,
    pub min_synthetic_reading: f64,
    pub mmd: MmdTest,
    pub pca: PcaProjection,
    pub tstr: TstrResult,
    pub guard_audit: AuditReport,
}

fn subsample(profiles: &[Vec<f64>], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut idx: Vec<usize> = (0..profiles.len()).collect();
    idx.shuffle(rng);
    idx.truncate(n);
    idx.sort_unstable();
    idx.into_iter().map(|i| profiles[i].clone()).collect()
}

/// Generates `synthetic_count` unconditional profiles and runs every metric
/// against the holdout set.
pub fn full_report(
    model: &CvaeModel,
    mixture: &LatentMixture,
    train: &Dataset,
    holdout: &Dataset,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    let request = GenerationRequest { condition: Condition::any(), count: cfg.synthetic_count, seed };
    let generated = generate(model, mixture, &request, &GuardConfig::default())?;
    let synthetic = LabeledProfiles::from_generated(&generated);
    let real = LabeledProfiles::from_dataset(holdout);

    let quantile_curves = QuantileCurves {
        quantiles: CURVE_QUANTILES.to_vec(),
        real: quantile_curves(&real.profiles, &CURVE_QUANTILES)?,
        synthetic: quantile_curves(&synthetic.profiles, &CURVE_QUANTILES)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(5);
    let real_sub = subsample(&real.profiles, cfg.mmd_sample, &mut rng);
    let synth_sub = subsample(&synthetic.profiles, cfg.mmd_sample, &mut rng);
    let mmd = fidelity_mmd(&real_sub, &synth_sub, &model.normalization, cfg.permutations, seed)?;
    let pca = pca_project(&real.profiles, &synthetic.profiles)?;
    let tstr = tstr(train, &synthetic, holdout)?;
    let min_synthetic_reading = synthetic.profiles.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed,
        synthetic_count: cfg.synthetic_count,
        holdout_count: holdout.len(),
        quantile_curves,
        min_synthetic_reading,
        mmd,
        pca,
        tstr,
        guard_audit: k_anonymity_audit(train, cfg.k_anonymity),
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `report.json`, `quantile_curves.csv` and `pca.csv` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;

        let mut w = csv::Writer::from_path(dir.join("quantile_curves.csv"))?;
        let mut header = vec!["period".to_string()];
        for side in ["real", "synthetic"] {
            for q in &self.quantile_curves.quantiles {
                header.push(format!("{side}_q{:02}", (q * 100.0).round() as u32));
            }
        }
        w.write_record(&header)?;
        for t in 0..PERIODS {
            let mut row = vec![(t + 1).to_string()];
            for curves in [&self.quantile_curves.real, &self.quantile_curves.synthetic] {
                row.extend(curves.iter().map(|c| c[t].to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("pca.csv"))?;
        w.write_record(["set", "pc1", "pc2"])?;
        for (set, pts) in [("real", &self.pca.real), ("synthetic", &self.pca.synthetic)] {
            for p in pts.iter() {
                w.write_record([set.to_string(), p[0].to_string(), p[1].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes generated profiles in the ingest CSV schema with synthetic ids and dates.
pub fn write_generated_csv(out: impl Write, g: &GenerationResult) -> Result<()> {
    use crate::profile_store::{write_csv, HouseholdId, LoadProfile, Record};
    let records = g
        .profiles
        .iter()
        .zip(&g.realized_labels)
        .enumerate()
        .map(|(i, (p, l))| {
            let profile = LoadProfile::new(HouseholdId(format!("synthetic-{:05}", i + 1)), synthetic_date(i), p.clone())?;
            Ok(Record { profile, labels: *l })
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv(out, &records)
}
