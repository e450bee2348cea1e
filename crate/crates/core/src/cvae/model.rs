use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::losses::{mmd_loss_grad, quantile_loss_grad, QUANTILES};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet};
use crate::profile_store::{NormalizationParams, LABEL_DIM, PERIODS};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mmd: f64,
    pub quantile: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { mmd: 1.0, quantile: 1.0 }
    }
}

/// Conditional VAE: encoder `[x | y] -> [mu | logvar]`, decoder `[z | y] -> x`.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaeModel {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub latent_dim: usize,
    pub loss_weights: LossWeights,
    pub bandwidths: Vec<f64>,
    pub normalization: NormalizationParams,
}

/// Per-component loss values; `total = mse + w_mmd * mmd + w_q * quantile`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub mse: f64,
    pub mmd: f64,
    pub quantile: f64,
}

/// Random inputs of one loss evaluation: reparameterization noise and the
/// prior batch the latent codes are matched against.
#[derive(Debug, Clone)]
pub struct BatchNoise {
    pub eps: DMatrix<f64>,
    pub prior: DMatrix<f64>,
}

impl BatchNoise {
    pub fn draw(rows: usize, latent_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        BatchNoise { eps: standard_normal(rows, latent_dim, rng), prior: standard_normal(rows, latent_dim, rng) }
    }
}

/// Row-major fill, so a given seed yields the same draws regardless of layout.
pub fn standard_normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

pub(crate) fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Network shape of a fresh model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub hidden_activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            latent_dim: 16,
            encoder_hidden: vec![128, 64],
            decoder_hidden: vec![64, 128],
            hidden_activation: Activation::Relu,
        }
    }
}

impl CvaeModel {
    pub fn new(
        arch: &Architecture,
        loss_weights: LossWeights,
        bandwidths: Vec<f64>,
        normalization: NormalizationParams,
        seed: u64,
    ) -> Result<Self> {
        let z = arch.latent_dim;
        if z == 0 {
            return Err(Error::InvalidArgument("latent dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc_sizes: Vec<usize> = std::iter::once(PERIODS + LABEL_DIM)
            .chain(arch.encoder_hidden.iter().copied())
            .chain(std::iter::once(2 * z))
            .collect();
        let dec_sizes: Vec<usize> = std::iter::once(z + LABEL_DIM)
            .chain(arch.decoder_hidden.iter().copied())
            .chain(std::iter::once(PERIODS))
            .collect();
        let encoder = DenseNet::new(&enc_sizes, arch.hidden_activation, Activation::Identity, &mut rng)?;
        let decoder = DenseNet::new(&dec_sizes, arch.hidden_activation, Activation::Identity, &mut rng)?;
        Self::from_parts(encoder, decoder, z, loss_weights, bandwidths, normalization)
    }

    pub fn from_parts(
        encoder: DenseNet,
        decoder: DenseNet,
        latent_dim: usize,
        loss_weights: LossWeights,
        bandwidths: Vec<f64>,
        normalization: NormalizationParams,
    ) -> Result<Self> {
        if encoder.input_size() != PERIODS + LABEL_DIM || encoder.output_size() != 2 * latent_dim {
            return Err(Error::DimensionMismatch(format!(
                "encoder must map {} -> {}, has {:?}",
                PERIODS + LABEL_DIM,
                2 * latent_dim,
                encoder.sizes()
            )));
        }
        if decoder.input_size() != latent_dim + LABEL_DIM || decoder.output_size() != PERIODS {
            return Err(Error::DimensionMismatch(format!(
                "decoder must map {} -> {PERIODS}, has {:?}",
                latent_dim + LABEL_DIM,
                decoder.sizes()
            )));
        }
        if !(loss_weights.mmd >= 0.0 && loss_weights.quantile >= 0.0) {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        if bandwidths.is_empty() || bandwidths.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument("bandwidths must be positive".into()));
        }
        Ok(CvaeModel { encoder, decoder, latent_dim, loss_weights, bandwidths, normalization })
    }

    pub fn quantiles(&self) -> [f64; 3] {
        QUANTILES
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    /// Encoder parameters followed by decoder parameters.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.encoder.flat_params();
        p.extend(self.decoder.flat_params());
        p
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.encoder.param_count();
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!("{} parameters for a {}-parameter model", flat.len(), self.param_count())));
        }
        self.encoder.set_flat_params(&flat[..n])?;
        self.decoder.set_flat_params(&flat[n..])
    }

    fn check_rows(&self, what: &str, m: &DMatrix<f64>, cols: usize, rows: Option<usize>) -> Result<()> {
        if m.ncols() != cols || rows.is_some_and(|r| r != m.nrows()) {
            return Err(Error::DimensionMismatch(format!(
                "{what} is {}x{}, expected width {cols}{}",
                m.nrows(),
                m.ncols(),
                rows.map(|r| format!(" and {r} rows")).unwrap_or_default()
            )));
        }
        Ok(())
    }

    /// Posterior mean and clamped log-variance.
    pub fn encode(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_rows("profile batch", x, PERIODS, None)?;
        self.check_rows("label batch", y, LABEL_DIM, Some(x.nrows()))?;
        let out = self.encoder.forward(&hstack(x, y))?;
        Ok(split_posterior(&out, self.latent_dim))
    }

    pub fn decode(&self, z: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows("latent batch", z, self.latent_dim, None)?;
        self.check_rows("label batch", y, LABEL_DIM, Some(z.nrows()))?;
        self.decoder.forward(&hstack(z, y))
    }

    /// `total_loss` with noise drawn from `seed`.
    pub fn total_loss(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, seed: u64) -> Result<LossBreakdown> {
        let noise = BatchNoise::draw(x.nrows(), self.latent_dim, &mut ChaCha8Rng::seed_from_u64(seed));
        self.loss_with_noise(x, y, &noise)
    }

    pub fn loss_with_noise(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, noise: &BatchNoise) -> Result<LossBreakdown> {
        self.loss_and_gradient(x, y, noise, false).map(|(l, _)| l)
    }

    /// Loss components and, when `with_grad`, the gradient of the total with
    /// respect to [`CvaeModel::flat_params`].
    pub fn loss_and_gradient(
        &self,
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        noise: &BatchNoise,
        with_grad: bool,
    ) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
        let b = x.nrows();
        self.check_rows("profile batch", x, PERIODS, None)?;
        self.check_rows("label batch", y, LABEL_DIM, Some(b))?;
        self.check_rows("noise", &noise.eps, self.latent_dim, Some(b))?;
        self.check_rows("prior batch", &noise.prior, self.latent_dim, Some(b))?;

        let (enc_out, enc_cache) = self.encoder.forward_cached(&hstack(x, y))?;
        let (mu, logvar) = split_posterior(&enc_out, self.latent_dim);
        let std = logvar.map(|v| (0.5 * v).exp());
        let z = &mu + std.component_mul(&noise.eps);
        let (xhat, dec_cache) = self.decoder.forward_cached(&hstack(&z, y))?;

        let resid = &xhat - x;
        let count = (b * PERIODS) as f64;
        let mse = resid.norm_squared() / count;
        let w = self.loss_weights;
        let (mmd, mmd_grad) = mmd_loss_grad(&z, &noise.prior, &self.bandwidths)?;
        let (quantile, q_grad) = quantile_loss_grad(x, &xhat, &QUANTILES)?;
        let breakdown = LossBreakdown { total: mse + w.mmd * mmd + w.quantile * quantile, mse, mmd, quantile };
        if !with_grad {
            return Ok((breakdown, None));
        }

        let d_xhat = resid * (2.0 / count) + q_grad * w.quantile;
        let dec_back = self.decoder.backward(&dec_cache, &d_xhat)?;
        let dz = dec_back.input.columns(0, self.latent_dim).into_owned() + mmd_grad * w.mmd;
        let raw_logvar = enc_out.columns(self.latent_dim, self.latent_dim);
        let mut d_enc = DMatrix::zeros(b, 2 * self.latent_dim);
        for i in 0..b {
            for j in 0..self.latent_dim {
                d_enc[(i, j)] = dz[(i, j)];
                let raw = raw_logvar[(i, j)];
                if (LOGVAR_MIN..=LOGVAR_MAX).contains(&raw) {
                    d_enc[(i, self.latent_dim + j)] = dz[(i, j)] * noise.eps[(i, j)] * 0.5 * std[(i, j)];
                }
            }
        }
        let enc_back = self.encoder.backward(&enc_cache, &d_enc)?;
        let mut grad = enc_back.params;
        grad.extend(dec_back.params);
        Ok((breakdown, Some(grad)))
    }
}

impl CvaeModel {
    /// Distance from the nearest point where the loss is not differentiable:
    /// relu kinks, log-variance clamp edges, the MMD zero clamp, quantile
    /// order-statistic swaps and quantile-gap sign changes. Finite-difference
    /// checks are only meaningful when this exceeds the perturbation effect.
    pub fn breakpoint_margin(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, noise: &BatchNoise) -> Result<f64> {
        let mut margin = f64::INFINITY;
        let (enc_out, enc_cache) = self.encoder.forward_cached(&hstack(x, y))?;
        let relu_margin = |net: &DenseNet, pre: &[DMatrix<f64>]| {
            net.layers()
                .iter()
                .zip(pre)
                .filter(|(l, _)| l.activation == Activation::Relu)
                .flat_map(|(_, p)| p.iter())
                .fold(f64::INFINITY, |m, v| m.min(v.abs()))
        };
        margin = margin.min(relu_margin(&self.encoder, enc_cache.pre_activations()));
        let raw_lv = enc_out.columns(self.latent_dim, self.latent_dim);
        margin = margin.min(raw_lv.iter().fold(f64::INFINITY, |m, v| {
            m.min((v - LOGVAR_MIN).abs()).min((v - LOGVAR_MAX).abs())
        }));
        let (mu, logvar) = split_posterior(&enc_out, self.latent_dim);
        let z = &mu + logvar.map(|v| (0.5 * v).exp()).component_mul(&noise.eps);
        let (xhat, dec_cache) = self.decoder.forward_cached(&hstack(&z, y))?;
        margin = margin.min(relu_margin(&self.decoder, dec_cache.pre_activations()));
        let (mmd, _) = mmd_loss_grad(&z, &noise.prior, &self.bandwidths)?;
        margin = margin.min(mmd);

        let b = x.nrows();
        for col in 0..PERIODS {
            let mut fake: Vec<f64> = xhat.column(col).iter().copied().collect();
            let mut real: Vec<f64> = x.column(col).iter().copied().collect();
            fake.sort_by(f64::total_cmp);
            real.sort_by(f64::total_cmp);
            for &q in &QUANTILES {
                let (lo, hi, frac) = super::losses::quantile_position(b, q);
                for k in lo.saturating_sub(1)..(hi + 1).min(b - 1) {
                    margin = margin.min(fake[k + 1] - fake[k]);
                }
                let qf = fake[lo] + frac * (fake[hi] - fake[lo]);
                let qr = real[lo] + frac * (real[hi] - real[lo]);
                margin = margin.min((qf - qr).abs());
            }
        }
        Ok(margin)
    }
}

fn split_posterior(out: &DMatrix<f64>, z: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mu = out.columns(0, z).into_owned();
    let logvar = out.columns(z, z).map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));
    (mu, logvar)
}

/// `z = mu + exp(logvar / 2) * eps`, `eps ~ N(0, I)` drawn row-major from `seed`.
pub fn reparameterize(mu: &DMatrix<f64>, logvar: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
    if mu.shape() != logvar.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", mu.shape(), logvar.shape())));
    }
    let eps = standard_normal(mu.nrows(), mu.ncols(), &mut ChaCha8Rng::seed_from_u64(seed));
    Ok(mu + logvar.map(|v| (0.5 * v).exp()).component_mul(&eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::losses::{default_bandwidths, mmd_loss, quantile_loss};
    use crate::nn::Dense;
    use crate::profile_store::NormalizationScheme;
    use nalgebra::DVector;
    use rand::Rng;

    fn norm() -> NormalizationParams {
        NormalizationParams::new(NormalizationScheme::GlobalLog1pStandard, vec![0.0; 48], vec![1.0; 48]).unwrap()
    }

    fn small_model(seed: u64) -> CvaeModel {
        let arch = Architecture { latent_dim: 4, encoder_hidden: vec![16], decoder_hidden: vec![16], ..Default::default() };
        CvaeModel::new(&arch, LossWeights::default(), default_bandwidths(4), norm(), seed).unwrap()
    }

    fn batch(b: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = standard_normal(b, 48, &mut rng);
        let mut y = DMatrix::zeros(b, LABEL_DIM);
        for i in 0..b {
            y[(i, 0)] = f64::from(rng.random::<bool>());
            y[(i, 3 + rng.random_range(0..5))] = 1.0;
            y[(i, 8 + rng.random_range(0..7))] = 1.0;
        }
        (x, y)
    }

    #[test]
    fn encode_decode_shapes_and_determinism() {
        let m = small_model(1);
        let (x, y) = batch(10, 2);
        let (mu, lv) = m.encode(&x, &y).unwrap();
        assert_eq!(mu.shape(), (10, 4));
        assert_eq!(lv.shape(), (10, 4));
        let dup_x = DMatrix::from_fn(2, 48, |_, j| x[(3, j)]);
        let dup_y = DMatrix::from_fn(2, LABEL_DIM, |_, j| y[(3, j)]);
        let (mu2, _) = m.encode(&dup_x, &dup_y).unwrap();
        assert_eq!(mu2.row(0), mu2.row(1));
        assert!((mu2.row(0) - mu.row(3)).amax() < 1e-12);
        let out = m.decode(&mu, &y).unwrap();
        assert_eq!(out.shape(), (10, 48));
        assert_eq!(out, m.decode(&mu, &y).unwrap());
        assert!(m.encode(&DMatrix::zeros(3, 47), &DMatrix::zeros(3, LABEL_DIM)).is_err());
        assert!(m.decode(&DMatrix::zeros(3, 4), &DMatrix::zeros(2, LABEL_DIM)).is_err());
    }

    #[test]
    fn logvar_clamped_to_ten() {
        let enc = DenseNet::from_layers(vec![Dense {
            weights: DMatrix::zeros(48 + LABEL_DIM, 2),
            bias: DVector::from_vec(vec![0.3, 12.0]),
            activation: Activation::Identity,
        }])
        .unwrap();
        let dec = DenseNet::from_layers(vec![Dense {
            weights: DMatrix::zeros(1 + LABEL_DIM, 48),
            bias: DVector::zeros(48),
            activation: Activation::Identity,
        }])
        .unwrap();
        let m = CvaeModel::from_parts(enc, dec, 1, LossWeights::default(), vec![1.0], norm()).unwrap();
        let (mu, lv) = m.encode(&DMatrix::zeros(2, 48), &DMatrix::zeros(2, LABEL_DIM)).unwrap();
        assert_eq!(mu[(0, 0)], 0.3);
        assert_eq!(lv[(1, 0)], 10.0);
    }

    #[test]
    fn reparameterize_small_variance_and_seeded() {
        let mu = DMatrix::from_fn(5, 3, |i, j| i as f64 - j as f64);
        let lv = DMatrix::from_element(5, 3, LOGVAR_MIN);
        let z = reparameterize(&mu, &lv, 3).unwrap();
        let eps = standard_normal(5, 3, &mut ChaCha8Rng::seed_from_u64(3));
        for i in 0..5 {
            for j in 0..3 {
                assert!((z[(i, j)] - mu[(i, j)]).abs() <= (-5.0f64).exp() * eps[(i, j)].abs() + 1e-15);
            }
        }
        assert_eq!(z, reparameterize(&mu, &lv, 3).unwrap());
    }

    #[test]
    fn reparameterize_monte_carlo_mean() {
        let n = 100_000;
        let lv_val = 0.4f64;
        let mu = DMatrix::from_element(n, 1, 1.25);
        let lv = DMatrix::from_element(n, 1, lv_val);
        let z = reparameterize(&mu, &lv, 17).unwrap();
        let mean = z.mean();
        let bound = 3.0 * (0.5 * lv_val).exp() / (n as f64).sqrt();
        assert!((mean - 1.25).abs() < bound, "{mean}");
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        use crate::nn::gradcheck::{central_differences, max_relative_error};
        let model = small_model(21);
        let (x, y, noise) = (0..)
            .find_map(|seed| {
                let (x, y) = batch(16, 1000 + seed);
                let noise = BatchNoise::draw(16, 4, &mut ChaCha8Rng::seed_from_u64(2000 + seed));
                (model.breakpoint_margin(&x, &y, &noise).unwrap() > 1e-4).then_some((x, y, noise))
            })
            .unwrap();
        let (loss, grad) = model.loss_and_gradient(&x, &y, &noise, true).unwrap();
        assert!(loss.mmd > 0.0 && loss.quantile > 0.0);
        let grad = grad.unwrap();
        let mut probe = model.clone();
        let numeric = central_differences(&model.flat_params(), 1e-5, |p| {
            probe.set_flat_params(p).unwrap();
            probe.loss_with_noise(&x, &y, &noise).unwrap().total
        });
        let err = max_relative_error(&grad, &numeric);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_weights_give_pure_mse() {
        let mut m = small_model(4);
        m.loss_weights = LossWeights { mmd: 0.0, quantile: 0.0 };
        let (x, y) = batch(16, 5);
        let l = m.total_loss(&x, &y, 9).unwrap();
        assert_eq!(l.total, l.mse);
        assert!(l.mmd >= 0.0 && l.quantile >= 0.0);
    }

    #[test]
    fn components_add_up_and_recompute() {
        let m = small_model(6);
        let (x, y) = batch(16, 7);
        let noise = BatchNoise::draw(16, 4, &mut ChaCha8Rng::seed_from_u64(8));
        let l = m.loss_with_noise(&x, &y, &noise).unwrap();
        let (mu, lv) = m.encode(&x, &y).unwrap();
        let z = &mu + lv.map(|v| (0.5 * v).exp()).component_mul(&noise.eps);
        let xhat = m.decode(&z, &y).unwrap();
        let mse = (&xhat - &x).norm_squared() / (16.0 * 48.0);
        let mmd = mmd_loss(&z, &noise.prior, &m.bandwidths).unwrap();
        let q = quantile_loss(&x, &xhat, &QUANTILES).unwrap();
        assert!((l.mse - mse).abs() < 1e-12);
        assert!((l.mmd - mmd).abs() < 1e-12);
        assert!((l.quantile - q).abs() < 1e-12);
        assert!((l.total - (mse + mmd + q)).abs() < 1e-12);
    }

    #[test]
    fn perfect_autoencoder_with_prior_latents_has_zero_loss() {
        // Encoder emits mu = 0 and logvar at the floor; decoder ignores its
        // input and emits a constant profile. The batch is that same profile.
        let z_dim = 2;
        let enc = DenseNet::from_layers(vec![Dense {
            weights: DMatrix::zeros(48 + LABEL_DIM, 2 * z_dim),
            bias: DVector::from_vec(vec![0.0, 0.0, -10.0, -10.0]),
            activation: Activation::Identity,
        }])
        .unwrap();
        let profile = DVector::from_fn(48, |t, _| (t as f64 * 0.2).sin());
        let dec = DenseNet::from_layers(vec![Dense {
            weights: DMatrix::zeros(z_dim + LABEL_DIM, 48),
            bias: profile.clone(),
            activation: Activation::Identity,
        }])
        .unwrap();
        let m = CvaeModel::from_parts(enc, dec, z_dim, LossWeights::default(), vec![1.0], norm()).unwrap();
        let x = DMatrix::from_fn(8, 48, |_, t| profile[t]);
        let y = DMatrix::zeros(8, LABEL_DIM);
        let eps = DMatrix::zeros(8, z_dim);
        let prior = DMatrix::zeros(8, z_dim);
        let l = m.loss_with_noise(&x, &y, &BatchNoise { eps, prior }).unwrap();
        assert_eq!(l.mse, 0.0);
        assert_eq!(l.quantile, 0.0);
        assert!(l.mmd.abs() < 1e-12);
        assert!(l.total.abs() < 1e-12);
    }
}
