//! Conditional VAE trained with reconstruction MSE, latent MMD prior matching
//! and batch-quantile matching.

mod losses;
mod model;
mod train;

pub use losses::{
    default_bandwidths, empirical_quantile, mmd_loss, mmd_loss_grad, quantile_loss, quantile_loss_grad,
    quantile_position, rbf_sum, MIN_QUANTILE_BATCH, QUANTILES,
};
pub use model::{
    reparameterize, standard_normal, Architecture, BatchNoise, CvaeModel, LossBreakdown, LossWeights, LOGVAR_MAX,
    LOGVAR_MIN,
};
pub use train::{train, EpochLog, TrainConfig, TrainLog, TrainingMatrices};
