//! Guarded conditional generation: sample `[z | labels]` rows from the
//! mixture, keep the rows whose decoded labels satisfy the request, decode
//! the kept latents against exact one-hot labels and clip at zero.

use std::fmt;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cvae::CvaeModel;
use crate::error::{Error, Result};
use crate::latent_gmm::{decode_sampled_labels, LatentMixture};
use crate::profile_store::{Condition, LabelVector, LABEL_DIM, PERIODS};

pub const MAX_COUNT: usize = 10_000;
/// Sampled rows allowed per requested profile before giving up.
pub const ATTEMPTS_PER_PROFILE: usize = 1000;
const SAMPLE_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    #[serde(default)]
    pub condition: Condition,
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.count > MAX_COUNT {
            return Err(Error::InvalidArgument(format!("count must be in 1..={MAX_COUNT}, got {}", self.count)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardConfig {
    pub min_fraction: f64,
    pub min_households: usize,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig { min_fraction: 0.01, min_households: 3 }
    }
}

/// Why a condition was refused. Carries only the thresholds, never the
/// matching household count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Refusal {
    MinFraction { min_fraction: f64 },
    MinHouseholds { min_households: usize },
}

impl fmt::Display for Refusal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Refusal::MinFraction { min_fraction } => write!(
                f,
                "matching households are below the minimum share ({}%) of the training population",
                min_fraction * 100.0
            ),
            Refusal::MinHouseholds { min_households } => {
                write!(f, "fewer than {min_households} training households match the condition")
            }
        }
    }
}

pub fn check_guards(mixture: &LatentMixture, condition: &Condition, guard: &GuardConfig) -> Result<(), Refusal> {
    let matching = mixture.population.matching_households(condition);
    if matching < guard.min_households {
        return Err(Refusal::MinHouseholds { min_households: guard.min_households });
    }
    if mixture.population_fraction(condition) < guard.min_fraction {
        return Err(Refusal::MinFraction { min_fraction: guard.min_fraction });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub attempts: usize,
    pub acceptance_rate: f64,
    pub population_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    /// `count` rows of 48 kWh readings.
    pub profiles: Vec<Vec<f64>>,
    pub realized_labels: Vec<LabelVector>,
    pub diagnostics: Diagnostics,
}

fn onehot_matrix(labels: &[LabelVector]) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(labels.len(), LABEL_DIM);
    for (i, l) in labels.iter().enumerate() {
        for (j, v) in l.encode_onehot().into_iter().enumerate() {
            y[(i, j)] = v;
        }
    }
    y
}

/// Decodes latents under the given labels into clipped kWh profiles.
pub fn decode_profiles(model: &CvaeModel, z: &DMatrix<f64>, labels: &[LabelVector]) -> Result<Vec<Vec<f64>>> {
    let out = model.decode(z, &onehot_matrix(labels))?;
    let mut rows = model.normalization.denormalize_rows(&out);
    for r in rows.iter_mut() {
        debug_assert_eq!(r.len(), PERIODS);
        for v in r.iter_mut() {
            *v = v.max(0.0);
        }
    }
    Ok(rows)
}

pub fn generate(
    model: &CvaeModel,
    mixture: &LatentMixture,
    req: &GenerationRequest,
    guard: &GuardConfig,
) -> Result<GenerationResult> {
    req.validate()?;
    if mixture.latent_dim != model.latent_dim || !mixture.label_layout.is_canonical() {
        return Err(Error::DimensionMismatch(format!(
            "mixture latent dim {} / layout {:?} does not fit model latent dim {}",
            mixture.latent_dim, mixture.label_layout, model.latent_dim
        )));
    }
    check_guards(mixture, &req.condition, guard).map_err(Error::GuardRefused)?;

    let z_dim = mixture.latent_dim;
    let budget = req.count * ATTEMPTS_PER_PROFILE;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mut latents: Vec<f64> = Vec::with_capacity(req.count * z_dim);
    let mut labels = Vec::with_capacity(req.count);
    let mut attempts = 0;
    'outer: while attempts < budget {
        let n = SAMPLE_CHUNK.min(budget - attempts);
        let rows = mixture.gmm.sample(n, &mut rng);
        for row in rows.row_iter() {
            attempts += 1;
            let tail: Vec<f64> = row.iter().skip(z_dim).copied().collect();
            let l = decode_sampled_labels(&tail, &mixture.label_layout)?;
            if req.condition.matches(&l) {
                latents.extend(row.iter().take(z_dim));
                labels.push(l);
                if labels.len() == req.count {
                    break 'outer;
                }
            }
        }
    }
    if labels.len() < req.count {
        return Err(Error::BudgetExhausted { requested: req.count, accepted: labels.len(), attempts });
    }
    let z = DMatrix::from_row_slice(req.count, z_dim, &latents);
    let profiles = decode_profiles(model, &z, &labels)?;
    Ok(GenerationResult {
        profiles,
        realized_labels: labels,
        diagnostics: Diagnostics {
            attempts,
            acceptance_rate: req.count as f64 / attempts as f64,
            population_fraction: mixture.population_fraction(&req.condition),
        },
    })
}
