use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, PERIODS};
use crate::error::{Error, Result};

/// Floor applied to per-timestep scale values.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScheme {
    /// Per-timestep standardization of raw kWh.
    PerTimestepStandard,
    /// `log(1 + x)` elementwise, then per-timestep standardization.
    #[default]
    GlobalLog1pStandard,
}

impl NormalizationScheme {
    pub fn tag(self) -> u8 {
        match self {
            NormalizationScheme::PerTimestepStandard => 0,
            NormalizationScheme::GlobalLog1pStandard => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(NormalizationScheme::PerTimestepStandard),
            1 => Some(NormalizationScheme::GlobalLog1pStandard),
            _ => None,
        }
    }

    fn forward(self, x: f64) -> f64 {
        match self {
            NormalizationScheme::PerTimestepStandard => x,
            NormalizationScheme::GlobalLog1pStandard => x.ln_1p(),
        }
    }

    fn inverse(self, y: f64) -> f64 {
        match self {
            NormalizationScheme::PerTimestepStandard => y,
            NormalizationScheme::GlobalLog1pStandard => y.exp_m1(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub scheme: NormalizationScheme,
    pub location: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormalizationParams {
    pub fn new(scheme: NormalizationScheme, location: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if location.len() != PERIODS || scale.len() != PERIODS {
            return Err(Error::DimensionMismatch("normalization needs 48 location and scale values".into()));
        }
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) || location.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("scale values must be finite and positive".into()));
        }
        Ok(NormalizationParams { scheme, location, scale })
    }

    pub fn normalize(&self, readings: &[f64]) -> Vec<f64> {
        readings
            .iter()
            .enumerate()
            .map(|(t, &x)| (self.scheme.forward(x) - self.location[t]) / self.scale[t])
            .collect()
    }

    pub fn denormalize(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(t, &y)| self.scheme.inverse(y * self.scale[t] + self.location[t]))
            .collect()
    }

    /// Normalizes every profile in the dataset into a `[N x 48]` matrix.
    pub fn normalize_dataset(&self, d: &Dataset) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(d.len(), PERIODS);
        for (i, r) in d.records().iter().enumerate() {
            for (t, v) in self.normalize(r.profile.readings()).into_iter().enumerate() {
                m[(i, t)] = v;
            }
        }
        m
    }

    pub fn denormalize_rows(&self, m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| {
                let row: Vec<f64> = m.row(i).iter().copied().collect();
                self.denormalize(&row)
            })
            .collect()
    }
}

/// Fits location/scale per timestep (population standard deviation, floored).
pub fn fit_normalization(d: &Dataset, scheme: NormalizationScheme) -> Result<NormalizationParams> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = d.len() as f64;
    let mut location = vec![0.0; PERIODS];
    for r in d.records() {
        for (t, &x) in r.profile.readings().iter().enumerate() {
            location[t] += scheme.forward(x);
        }
    }
    location.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; PERIODS];
    for r in d.records() {
        for (t, &x) in r.profile.readings().iter().enumerate() {
            let dlt = scheme.forward(x) - location[t];
            var[t] += dlt * dlt;
        }
    }
    let scale = var.iter().map(|v| (v / n).sqrt().max(SCALE_FLOOR)).collect();
    NormalizationParams::new(scheme, location, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile_store::dataset::{HouseholdId, LoadProfile, Record};
    use crate::profile_store::labels::{EnergyRating, LabelVector, PropertyType};
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn labels() -> LabelVector {
        LabelVector {
            has_ev: false,
            has_heat_pump: false,
            smart_tariff: false,
            property_type: PropertyType::Detached,
            energy_rating: EnergyRating::B,
        }
    }

    fn dataset(rows: Vec<Vec<f64>>) -> Dataset {
        let recs = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| Record {
                profile: LoadProfile::new(
                    HouseholdId(format!("h{i}")),
                    NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
                    r,
                )
                .unwrap(),
                labels: labels(),
            })
            .collect();
        Dataset::new(recs).unwrap()
    }

    #[test]
    fn constant_timestep_gets_floor() {
        let mut a = vec![0.5; 48];
        let mut b = vec![1.5; 48];
        a[0] = 2.0;
        b[0] = 2.0;
        let p = fit_normalization(&dataset(vec![a, b]), NormalizationScheme::PerTimestepStandard).unwrap();
        assert_eq!(p.location[0], 2.0);
        assert_eq!(p.scale[0], SCALE_FLOOR);
    }

    #[test]
    fn population_std_two_points() {
        let mut a = vec![0.5; 48];
        let mut b = vec![0.5; 48];
        a[0] = 1.0;
        b[0] = 3.0;
        let p = fit_normalization(&dataset(vec![a, b]), NormalizationScheme::PerTimestepStandard).unwrap();
        assert_eq!(p.location[0], 2.0);
        assert_eq!(p.scale[0], 1.0);
    }

    #[test]
    fn standardized_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..48).map(|_| rng.random_range(0.0..4.0)).collect()).collect();
        let d = dataset(rows);
        for scheme in [NormalizationScheme::PerTimestepStandard, NormalizationScheme::GlobalLog1pStandard] {
            let p = fit_normalization(&d, scheme).unwrap();
            let m = p.normalize_dataset(&d);
            for t in 0..48 {
                let col = m.column(t);
                let mean = col.mean();
                let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
                assert!(mean.abs() < 1e-6);
                assert!((sd - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn empty_dataset_errors() {
        let d = Dataset::new(vec![]).unwrap();
        assert!(matches!(fit_normalization(&d, NormalizationScheme::default()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn round_trip_thousand_profiles() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let p = NormalizationParams::new(
            NormalizationScheme::GlobalLog1pStandard,
            (0..48).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..48).map(|_| rng.random_range(0.1..2.0)).collect(),
        )
        .unwrap();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..48).map(|_| rng.random_range(0.0..8.0)).collect();
            let back = p.denormalize(&p.normalize(&x));
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-3), "{a} vs {b}");
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip_any_scheme(x in proptest::collection::vec(0.0f64..50.0, 48), per_step in any::<bool>()) {
            let scheme = if per_step { NormalizationScheme::PerTimestepStandard } else { NormalizationScheme::GlobalLog1pStandard };
            let p = NormalizationParams::new(scheme, vec![0.3; 48], vec![0.7; 48]).unwrap();
            let back = p.denormalize(&p.normalize(&x));
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-3));
            }
        }
    }
}
