//! Training pipeline shared by the CLI, the service and the test suites:
//! k-anonymity enforcement, CVAE training, encoding and mixture fitting.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::cvae::{self, standard_normal, CvaeModel, TrainConfig, TrainLog, TrainingMatrices};
use crate::error::{Error, Result};
use crate::latent_gmm::{fit_gmm, GaussianMixture, GmmConfig, LatentMixture, Population};
use crate::profile_store::{enforce_k_anonymity, Dataset, KAnonymityPolicy};

/// Which latent point represents a training profile when fitting the mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LatentSource {
    /// Encoder mean.
    Mean,
    /// One reparameterized draw per profile.
    #[default]
    Posterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k_anonymity: usize,
    pub k_policy: KAnonymityPolicy,
    pub train: TrainConfig,
    pub gmm: GmmConfig,
    pub latent_source: LatentSource,
    /// When non-empty, the mixture size is chosen from these by BIC and
    /// `gmm.components` is ignored.
    pub component_candidates: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k_anonymity: 3,
            k_policy: KAnonymityPolicy::default(),
            train: TrainConfig::default(),
            gmm: GmmConfig::default(),
            latent_source: LatentSource::default(),
            component_candidates: Vec::new(),
        }
    }
}

impl PipelineConfig {
    /// Overrides every seed with values derived from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.gmm.seed = seed;
        self
    }
}

/// `[z | one-hot labels]` rows for every profile in `d`.
pub fn latents_with_labels(model: &CvaeModel, d: &Dataset, source: LatentSource, seed: u64) -> Result<DMatrix<f64>> {
    let m = TrainingMatrices::from_dataset(d, &model.normalization);
    let (mu, logvar) = model.encode(&m.x, &m.y)?;
    let z = match source {
        LatentSource::Mean => mu,
        LatentSource::Posterior => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(4);
            let eps = standard_normal(mu.nrows(), mu.ncols(), &mut rng);
            mu + logvar.map(|v| (0.5 * v).exp()).component_mul(&eps)
        }
    };
    let z_dim = z.ncols();
    Ok(DMatrix::from_fn(z.nrows(), z_dim + m.y.ncols(), |i, j| {
        if j < z_dim {
            z[(i, j)]
        } else {
            m.y[(i, j - z_dim)]
        }
    }))
}

pub fn fit_latent_mixture(
    model: &CvaeModel,
    d: &Dataset,
    cfg: &GmmConfig,
    source: LatentSource,
) -> Result<(LatentMixture, Vec<f64>)> {
    let data = latents_with_labels(model, d, source, cfg.seed)?;
    let (gmm, trace) = fit_gmm(&data, cfg)?;
    let mixture = LatentMixture::new(gmm, model.latent_dim, Population::new(d.label_counts().clone()))?;
    Ok((mixture, trace))
}

/// BIC and EM trace of one candidate mixture size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicScore {
    pub components: usize,
    pub bic: f64,
    pub trace: Vec<f64>,
}

/// Fits one mixture per candidate size on the same latent rows and keeps the
/// lowest BIC; ties go to the smaller size.
pub fn select_latent_mixture(
    model: &CvaeModel,
    d: &Dataset,
    cfg: &GmmConfig,
    source: LatentSource,
    candidates: &[usize],
) -> Result<(LatentMixture, Vec<f64>, Vec<BicScore>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no mixture size candidates".into()));
    }
    let data = latents_with_labels(model, d, source, cfg.seed)?;
    let mut sizes = candidates.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let mut scores = Vec::with_capacity(sizes.len());
    let mut best: Option<(f64, GaussianMixture, Vec<f64>)> = None;
    for k in sizes {
        let (gmm, trace) = fit_gmm(&data, &GmmConfig { components: k, ..cfg.clone() })?;
        let bic = gmm.bic(&data)?;
        info!(components = k, bic, "mixture candidate");
        if best.as_ref().is_none_or(|(b, _, _)| bic < *b) {
            best = Some((bic, gmm, trace.clone()));
        }
        scores.push(BicScore { components: k, bic, trace });
    }
    let (_, gmm, trace) = best.expect("at least one candidate");
    let mixture = LatentMixture::new(gmm, model.latent_dim, Population::new(d.label_counts().clone()))?;
    Ok((mixture, trace, scores))
}

#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub model: CvaeModel,
    pub mixture: LatentMixture,
    pub train_log: TrainLog,
    pub em_trace: Vec<f64>,
    /// Per-candidate BIC when the mixture size was selected.
    pub bic_scores: Vec<BicScore>,
    /// Training set after k-anonymity enforcement.
    pub training_set: Dataset,
}

pub fn train_pipeline(d: &Dataset, cfg: &PipelineConfig) -> Result<TrainedPipeline> {
    let training_set = enforce_k_anonymity(d, cfg.k_anonymity, cfg.k_policy)?;
    info!(
        households = training_set.household_count(),
        dropped = d.household_count() - training_set.household_count(),
        "k-anonymity enforced"
    );
    let (model, train_log) = cvae::train(&training_set, &cfg.train)?;
    let (mixture, em_trace, bic_scores) = if cfg.component_candidates.is_empty() {
        let (m, t) = fit_latent_mixture(&model, &training_set, &cfg.gmm, cfg.latent_source)?;
        (m, t, Vec::new())
    } else {
        select_latent_mixture(&model, &training_set, &cfg.gmm, cfg.latent_source, &cfg.component_candidates)?
    };
    info!(components = mixture.gmm.components(), iterations = em_trace.len(), "mixture fitted");
    Ok(TrainedPipeline { model, mixture, train_log, em_trace, bic_scores, training_set })
}
