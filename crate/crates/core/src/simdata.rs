//! Deterministic simulated household cohorts with known load structure.
//!
//! Every profile is a constant base load plus raised-cosine bumps:
//! a morning peak (periods 14-18) and an evening peak (35-42) for everyone,
//! cold-season heating bumps for heat-pump homes, and overnight charging
//! blocks (periods 1-8 and/or 45-48) on a random subset of days for EV homes.
//! `noise_scale` drives household jitter, day-level variation and per-reading
//! multiplicative lognormal noise; at zero, profiles depend only on labels,
//! date and the EV session drawn for that day.

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile_store::{
    is_weekend, Dataset, EnergyRating, HouseholdId, LabelVector, LoadProfile, PropertyType, Record, PERIODS,
};

/// Household-level jitter is this multiple of `noise_scale`.
const HOUSEHOLD_SPREAD: f64 = 2.5;
/// Whole-day multiplicative variation is this multiple of `noise_scale`.
const DAY_SPREAD: f64 = 1.5;
/// Probability an EV household charges on a given day.
const EV_CHARGE_DAY_PROB: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_households: usize,
    pub days_per_household: usize,
    pub label_mix: Vec<(LabelVector, f64)>,
    pub noise_scale: f64,
    pub seed: u64,
}

impl CohortSpec {
    /// 600 households x 60 days over a 17-combination label mix.
    pub fn desk_scale(seed: u64) -> Self {
        CohortSpec {
            n_households: 600,
            days_per_household: 60,
            label_mix: default_label_mix(),
            noise_scale: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_households == 0 || self.days_per_household == 0 {
            return Err(Error::InvalidArgument("cohort needs at least one household and one day".into()));
        }
        if self.label_mix.is_empty() {
            return Err(Error::InvalidArgument("label mix is empty".into()));
        }
        if self.label_mix.iter().any(|(_, p)| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument("label mix proportions must be non-negative".into()));
        }
        let total: f64 = self.label_mix.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("label mix proportions sum to {total}, not 1")));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::InvalidArgument("noise_scale must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn default_label_mix() -> Vec<(LabelVector, f64)> {
    use EnergyRating::*;
    use PropertyType::*;
    let l = |ev, hp, st, pt, er| LabelVector {
        has_ev: ev,
        has_heat_pump: hp,
        smart_tariff: st,
        property_type: pt,
        energy_rating: er,
    };
    vec![
        (l(false, false, false, SemiDetached, D), 0.10),
        (l(false, false, false, Terraced, D), 0.09),
        (l(false, false, false, Detached, C), 0.06),
        (l(false, false, false, Flat, C), 0.07),
        (l(false, false, true, SemiDetached, C), 0.06),
        (l(false, false, true, Terraced, E), 0.05),
        (l(false, false, false, Bungalow, E), 0.05),
        (l(false, false, true, Flat, B), 0.04),
        (l(true, false, false, Detached, C), 0.07),
        (l(true, false, true, Detached, B), 0.07),
        (l(true, false, true, SemiDetached, C), 0.06),
        (l(true, false, false, Terraced, D), 0.05),
        (l(false, true, false, Detached, B), 0.05),
        (l(false, true, true, SemiDetached, B), 0.05),
        (l(false, true, false, Bungalow, C), 0.04),
        (l(true, true, true, Detached, A), 0.05),
        (l(true, true, true, SemiDetached, B), 0.04),
    ]
}

/// First simulated date; day `j` falls on `start + j * stride` with the
/// stride chosen so the days cover roughly a year.
pub fn simulated_date(day: usize, days_per_household: usize) -> NaiveDate {
    let start = NaiveDate::from_ymd_opt(2021, 9, 1).expect("valid date");
    let stride = (365 / days_per_household).max(1) as i64;
    start + Duration::days(day as i64 * stride)
}

pub fn is_cold_season(date: NaiveDate) -> bool {
    matches!(date.month(), 10..=12 | 1..=3)
}

fn size_factor(p: PropertyType) -> f64 {
    match p {
        PropertyType::Detached => 1.35,
        PropertyType::SemiDetached => 1.1,
        PropertyType::Terraced => 1.0,
        PropertyType::Flat => 0.7,
        PropertyType::Bungalow => 0.9,
    }
}

fn heating_factor(r: EnergyRating) -> f64 {
    [0.6, 0.75, 0.9, 1.0, 1.15, 1.3, 1.5][r.index()]
}

/// Raised cosine of height `amp` centred at `center` with half-width `half`
/// (periods are 1-based).
fn bump(period: f64, center: f64, half: f64, amp: f64) -> f64 {
    let d = (period - center).abs();
    if d >= half {
        0.0
    } else {
        amp * 0.5 * (1.0 + (std::f64::consts::PI * d / half).cos())
    }
}

struct HouseholdTraits {
    base: f64,
    morning: f64,
    evening: f64,
    shift: f64,
}

#[derive(Debug, Clone, Copy)]
struct ChargeBlock {
    first: usize,
    last: usize,
    rate: f64,
}

fn pick_label(mix: &[(LabelVector, f64)], u: f64) -> LabelVector {
    let mut acc = 0.0;
    for (l, p) in mix {
        acc += p;
        if u < acc {
            return *l;
        }
    }
    mix.iter().rev().find(|(_, p)| *p > 0.0).map(|(l, _)| *l).unwrap_or(mix[0].0)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn charging_sessions(rng: &mut ChaCha8Rng) -> Vec<ChargeBlock> {
    if rng.random::<f64>() >= EV_CHARGE_DAY_PROB {
        return Vec::new();
    }
    let kind = rng.random::<f64>();
    let mut blocks = Vec::with_capacity(2);
    if kind < 0.95 {
        let first = rng.random_range(1..=3);
        let len = rng.random_range(4..=6);
        blocks.push(ChargeBlock { first, last: (first + len - 1).min(8), rate: rng.random_range(3.0..4.5) });
    }
    if kind >= 0.9 {
        let first = rng.random_range(45..=47);
        blocks.push(ChargeBlock { first, last: 48, rate: rng.random_range(3.0..4.5) });
    }
    blocks
}

fn household_records(spec: &CohortSpec, index: usize) -> Vec<Record> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let labels = pick_label(&spec.label_mix, rng.random());
    let s = spec.noise_scale;
    let size = size_factor(labels.property_type);
    let lognormal = |spread: f64, rng: &mut ChaCha8Rng| (spread * s * normal(rng)).exp();
    let traits = HouseholdTraits {
        base: 0.12 * size * lognormal(HOUSEHOLD_SPREAD, &mut rng),
        morning: 0.25 * size * lognormal(HOUSEHOLD_SPREAD, &mut rng),
        evening: 0.55 * size * lognormal(HOUSEHOLD_SPREAD, &mut rng),
        shift: 10.0 * s * normal(&mut rng),
    };
    let id = HouseholdId(format!("h{index:04}"));

    (0..spec.days_per_household)
        .map(|day| {
            let date = simulated_date(day, spec.days_per_household);
            let sessions = if labels.has_ev { charging_sessions(&mut rng) } else { Vec::new() };
            let day_factor = lognormal(DAY_SPREAD, &mut rng);
            let readings = (1..=PERIODS)
                .map(|p| {
                    let clean = expected_load(&labels, &traits, date, &sessions, p);
                    let noise = (s * normal(&mut rng)).exp();
                    clean * day_factor * noise
                })
                .collect();
            Record {
                profile: LoadProfile::new(id.clone(), date, readings).expect("simulated readings are valid"),
                labels,
            }
        })
        .collect()
}

fn expected_load(
    labels: &LabelVector,
    h: &HouseholdTraits,
    date: NaiveDate,
    sessions: &[ChargeBlock],
    period: usize,
) -> f64 {
    let t = period as f64;
    let weekend = is_weekend(date);
    let (m_center, m_half) = if weekend { (16.5, 5.0) } else { (15.5, 4.0) };
    let (e_center, e_amp) = if labels.smart_tariff { (40.0, 0.85) } else { (38.5, 1.0) };
    let mut load = h.base
        + bump(t, m_center + h.shift, m_half, h.morning)
        + bump(t, e_center + h.shift, 5.0, h.evening * e_amp);
    if labels.has_heat_pump {
        let hf = heating_factor(labels.energy_rating);
        if is_cold_season(date) {
            load += hf * (0.15 + bump(t, 14.0, 6.0, 0.7) + bump(t, 36.0, 8.0, 0.6));
        } else {
            load += hf * (0.03 + bump(t, 14.0, 3.0, 0.2));
        }
    }
    for b in sessions {
        if (b.first..=b.last).contains(&period) {
            load += b.rate;
        }
    }
    load
}

pub fn generate_cohort(spec: &CohortSpec) -> Result<Dataset> {
    spec.validate()?;
    let records: Vec<Record> = (0..spec.n_households)
        .into_par_iter()
        .map(|i| household_records(spec, i))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Dataset::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_curve<'a>(records: impl Iterator<Item = &'a Record>) -> Vec<f64> {
        let mut sum = vec![0.0; PERIODS];
        let mut n = 0.0;
        for r in records {
            for (s, v) in sum.iter_mut().zip(r.profile.readings()) {
                *s += v;
            }
            n += 1.0;
        }
        sum.into_iter().map(|s| s / n).collect()
    }

    fn small(mix: Vec<(LabelVector, f64)>, noise: f64) -> CohortSpec {
        CohortSpec { n_households: 60, days_per_household: 30, label_mix: mix, noise_scale: noise, seed: 9 }
    }

    #[test]
    fn all_ev_overnight_exceeds_midday() {
        let mix: Vec<_> = default_label_mix().into_iter().filter(|(l, _)| l.has_ev).collect();
        let total: f64 = mix.iter().map(|(_, p)| p).sum();
        let mix = mix.into_iter().map(|(l, p)| (l, p / total)).collect();
        let d = generate_cohort(&small(mix, 0.1)).unwrap();
        assert!(d.records().iter().all(|r| r.labels.has_ev));
        let m = mean_curve(d.records().iter());
        let night: f64 = m[0..8].iter().sum::<f64>() / 8.0;
        let midday: f64 = m[19..28].iter().sum::<f64>() / 9.0;
        assert!(night > midday, "{night} vs {midday}");
    }

    #[test]
    fn zero_noise_identical_labels_identical_profiles() {
        let d = generate_cohort(&small(default_label_mix(), 0.0)).unwrap();
        let mut pairs = 0;
        let recs = d.records();
        for a in recs.iter().filter(|r| !r.labels.has_ev) {
            for b in recs.iter().filter(|r| r.labels == a.labels && r.profile.date() == a.profile.date()) {
                assert_eq!(a.profile.readings(), b.profile.readings());
                pairs += 1;
            }
        }
        assert!(pairs > recs.len() / 2);
    }

    #[test]
    fn seeded_determinism() {
        let spec = small(default_label_mix(), 0.2);
        assert_eq!(generate_cohort(&spec).unwrap(), generate_cohort(&spec).unwrap());
    }

    #[test]
    fn bad_mix_rejected() {
        let mut mix = default_label_mix();
        mix[0].1 += 0.01;
        assert!(generate_cohort(&small(mix, 0.1)).is_err());
    }

    #[test]
    fn two_local_maxima_without_lct() {
        let d = generate_cohort(&small(default_label_mix(), 0.0)).unwrap();
        let m = mean_curve(d.records().iter().filter(|r| !r.labels.has_ev && !r.labels.has_heat_pump));
        let maxima: Vec<usize> = (1..PERIODS - 1).filter(|&t| m[t] > m[t - 1] && m[t] >= m[t + 1]).collect();
        assert_eq!(maxima.len(), 2, "{maxima:?}");
        assert!((13..18).contains(&maxima[0]), "{maxima:?}");
        assert!((34..42).contains(&maxima[1]), "{maxima:?}");
    }

    #[test]
    fn ev_gap_positive_in_window_and_flat_at_midday() {
        let base: Vec<_> = default_label_mix().into_iter().filter(|(l, _)| !l.has_ev).collect();
        let total: f64 = base.iter().map(|(_, p)| p).sum();
        let mut mix = Vec::new();
        for (l, p) in base {
            mix.push((l, 0.5 * p / total));
            mix.push((LabelVector { has_ev: true, ..l }, 0.5 * p / total));
        }
        let spec = CohortSpec { n_households: 400, days_per_household: 60, label_mix: mix, noise_scale: 0.0, seed: 4 };
        let d = generate_cohort(&spec).unwrap();
        let ev = mean_curve(d.records().iter().filter(|r| r.labels.has_ev));
        let non = mean_curve(d.records().iter().filter(|r| !r.labels.has_ev));
        for t in (0..8).chain(44..48) {
            assert!(ev[t] - non[t] > 0.0, "period {}", t + 1);
        }
        for t in 20..28 {
            assert!((ev[t] - non[t]).abs() < 0.05, "period {} gap {}", t + 1, ev[t] - non[t]);
        }
    }
}
