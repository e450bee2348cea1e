use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::{debug, info};

use super::losses::MIN_QUANTILE_BATCH;
use super::model::{Architecture, BatchNoise, CvaeModel, LossBreakdown, LossWeights};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState};
use crate::profile_store::{
    fit_normalization, split_holdout, Dataset, NormalizationParams, NormalizationScheme, LABEL_DIM,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    pub lambda_mmd: f64,
    pub lambda_q: f64,
    /// Bandwidths are these multiples of `sqrt(latent_dim)`.
    pub bandwidth_multipliers: Vec<f64>,
    pub seed: u64,
    pub patience: usize,
    /// Share of training households held back to pick the best epoch.
    pub validation_fraction: f64,
    pub architecture: Architecture,
    pub normalization: NormalizationScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 128,
            learning_rate: 1e-3,
            lr_decay: 0.97,
            lambda_mmd: 1.0,
            lambda_q: 1.0,
            bandwidth_multipliers: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            seed: 0,
            patience: 6,
            validation_fraction: 0.1,
            architecture: Architecture::default(),
            normalization: NormalizationScheme::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < MIN_QUANTILE_BATCH {
            return Err(Error::InvalidArgument(format!(
                "batch size {} below minimum {MIN_QUANTILE_BATCH}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidArgument("learning rate must be positive, decay in (0, 1]".into()));
        }
        if !(self.lambda_mmd >= 0.0 && self.lambda_q >= 0.0) {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        if self.bandwidth_multipliers.is_empty() || self.bandwidth_multipliers.iter().any(|m| *m <= 0.0) {
            return Err(Error::InvalidArgument("bandwidth multipliers must be positive".into()));
        }
        Ok(())
    }

    pub fn bandwidths(&self) -> Vec<f64> {
        let root = (self.architecture.latent_dim as f64).sqrt();
        self.bandwidth_multipliers.iter().map(|m| m * root).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub validation: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Normalized profiles and one-hot labels as aligned matrices.
#[derive(Debug, Clone)]
pub struct TrainingMatrices {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl TrainingMatrices {
    pub fn from_dataset(d: &Dataset, norm: &NormalizationParams) -> Self {
        let x = norm.normalize_dataset(d);
        let mut y = DMatrix::zeros(d.len(), LABEL_DIM);
        for (i, r) in d.records().iter().enumerate() {
            for (j, v) in r.labels.encode_onehot().into_iter().enumerate() {
                y[(i, j)] = v;
            }
        }
        TrainingMatrices { x, y }
    }

    fn rows(&self, idx: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.x.select_rows(idx), self.y.select_rows(idx))
    }
}

/// Consecutive chunks of `size`; a short tail is folded into the previous chunk.
fn chunks(idx: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = idx.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|c| c.len() < MIN_QUANTILE_BATCH) {
        let n = out.len();
        let start = (n - 2) * size;
        out.truncate(n - 2);
        out.push(&idx[start..]);
    }
    out
}

fn mean_breakdown(items: &[(LossBreakdown, usize)]) -> LossBreakdown {
    let n: usize = items.iter().map(|(_, c)| c).sum();
    let mut acc = LossBreakdown::default();
    for (l, c) in items {
        let w = *c as f64 / n as f64;
        acc.total += w * l.total;
        acc.mse += w * l.mse;
        acc.mmd += w * l.mmd;
        acc.quantile += w * l.quantile;
    }
    acc
}

/// Fits normalization on `d`, holds out a validation share of households and
/// trains with Adam, keeping the parameters of the best validation epoch.
pub fn train(d: &Dataset, cfg: &TrainConfig) -> Result<(CvaeModel, TrainLog)> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let norm = fit_normalization(d, cfg.normalization)?;
    let (fit_set, val_set) = split_holdout(d, cfg.validation_fraction, cfg.seed)?;
    if fit_set.len() < MIN_QUANTILE_BATCH || val_set.len() < MIN_QUANTILE_BATCH {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_QUANTILE_BATCH} profiles on each side of the validation split"
        )));
    }
    let fit = TrainingMatrices::from_dataset(&fit_set, &norm);
    let val = TrainingMatrices::from_dataset(&val_set, &norm);

    let weights = LossWeights { mmd: cfg.lambda_mmd, quantile: cfg.lambda_q };
    let mut model = CvaeModel::new(&cfg.architecture, weights, cfg.bandwidths(), norm, cfg.seed)?;
    let z_dim = model.latent_dim;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(2);
    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    val_rng.set_stream(3);

    let val_idx: Vec<usize> = (0..val.x.nrows()).collect();
    let val_batches: Vec<(DMatrix<f64>, DMatrix<f64>, BatchNoise)> = chunks(&val_idx, cfg.batch_size)
        .into_iter()
        .map(|c| {
            let (x, y) = val.rows(c);
            let noise = BatchNoise::draw(c.len(), z_dim, &mut val_rng);
            (x, y, noise)
        })
        .collect();

    let mut adam = AdamState::new(model.param_count(), AdamConfig { learning_rate: cfg.learning_rate, ..Default::default() });
    let mut params = model.flat_params();
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..fit.x.nrows()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut train_losses = Vec::new();
        for (b, idx) in chunks(&order, cfg.batch_size).into_iter().enumerate() {
            let (x, y) = fit.rows(idx);
            let noise = BatchNoise::draw(idx.len(), z_dim, &mut noise_rng);
            let (loss, grad) = model.loss_and_gradient(&x, &y, &noise, true)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {}", b + 1)));
            }
            let grad = grad.expect("gradient requested");
            adam.step(&mut params, &grad)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {}: {e}", b + 1)))?;
            model.set_flat_params(&params)?;
            train_losses.push((loss, idx.len()));
        }
        adam.config.learning_rate *= cfg.lr_decay;

        let mut val_losses = Vec::with_capacity(val_batches.len());
        for (x, y, noise) in &val_batches {
            val_losses.push((model.loss_with_noise(x, y, noise)?, x.nrows()));
        }
        let entry = EpochLog { epoch, train: mean_breakdown(&train_losses), validation: mean_breakdown(&val_losses) };
        if !entry.validation.total.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        info!(
            epoch,
            train = entry.train.total,
            val = entry.validation.total,
            mse = entry.validation.mse,
            mmd = entry.validation.mmd,
            quantile = entry.validation.quantile,
            "epoch finished"
        );
        if entry.validation.total < best.0 {
            best = (entry.validation.total, params.clone(), epoch);
        }
        log.epochs.push(entry);
        if epoch - best.2 >= cfg.patience {
            debug!(epoch, best = best.2, "early stop");
            break;
        }
    }
    model.set_flat_params(&best.1)?;
    log.best_epoch = best.2;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_fold_short_tail() {
        let idx: Vec<usize> = (0..21).collect();
        let c = chunks(&idx, 10);
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].len(), 11);
        let idx: Vec<usize> = (0..24).collect();
        let c = chunks(&idx, 8);
        assert_eq!(c.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![8, 8, 8]);
    }

    #[test]
    fn config_rejects_small_batches() {
        let cfg = TrainConfig { batch_size: 4, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_dataset_errors() {
        let d = Dataset::new(vec![]).unwrap();
        assert!(matches!(train(&d, &TrainConfig::default()), Err(Error::EmptyDataset)));
    }
}
