mod common;

use std::sync::OnceLock;

use proptest::prelude::*;

use loadsynth::artifact::Artifact;
use loadsynth::eval::quantile_curves;
use loadsynth::generator::{check_guards, generate, GenerationRequest, GuardConfig};
use loadsynth::profile_store::{Condition, EnergyRating, LabelVector, PropertyType, PERIODS};

fn artifact() -> &'static Artifact {
    static A: OnceLock<Artifact> = OnceLock::new();
    A.get_or_init(|| common::tiny_artifact(3))
}

fn condition() -> impl Strategy<Value = Condition> {
    (
        proptest::option::of(any::<bool>()),
        proptest::option::of(any::<bool>()),
        proptest::option::of(any::<bool>()),
        proptest::option::of(0..PropertyType::ALL.len()),
        proptest::option::of(0..EnergyRating::ALL.len()),
    )
        .prop_map(|(ev, hp, st, pt, er)| Condition {
            has_ev: ev,
            has_heat_pump: hp,
            smart_tariff: st,
            property_type: pt.map(|i| PropertyType::ALL[i]),
            energy_rating: er.map(|i| EnergyRating::ALL[i]),
        })
}

proptest! {
    #[test]
    fn onehot_decodes_to_itself(i in 0usize..280) {
        let l = LabelVector::all().nth(i).unwrap();
        prop_assert_eq!(LabelVector::decode(&l.encode_onehot()).unwrap(), l);
    }

    #[test]
    fn quantile_curves_are_ordered(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..10.0, PERIODS), 20..60)) {
        let qs = [0.05, 0.25, 0.5, 0.75, 0.95];
        let curves = quantile_curves(&rows, &qs).unwrap();
        for t in 0..PERIODS {
            let lo = rows.iter().map(|r| r[t]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[t]).fold(f64::NEG_INFINITY, f64::max);
            for w in curves.windows(2) {
                prop_assert!(w[0][t] <= w[1][t]);
            }
            prop_assert!(curves[0][t] >= lo && curves[4][t] <= hi);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Either the guard refuses, or every profile carries labels satisfying
    /// the condition and non-negative readings.
    #[test]
    fn generation_honours_condition(cond in condition(), seed in any::<u64>(), count in 1usize..20) {
        let a = artifact();
        let guard = GuardConfig::default();
        let req = GenerationRequest { condition: cond, count, seed };
        match check_guards(&a.mixture, &cond, &guard) {
            Err(_) => prop_assert!(generate(&a.model, &a.mixture, &req, &guard).is_err()),
            Ok(()) => {
                // Rare conditions may legitimately exhaust the rejection budget.
                if let Ok(g) = generate(&a.model, &a.mixture, &req, &guard) {
                    prop_assert_eq!(g.profiles.len(), count);
                    prop_assert!(g.realized_labels.iter().all(|l| cond.matches(l)));
                    prop_assert!(g.profiles.iter().flatten().all(|v| *v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn artifact_bytes_round_trip_and_detect_flips(pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let a = artifact();
        let bytes = a.to_bytes();
        prop_assert_eq!(Artifact::from_bytes(&bytes).unwrap().to_bytes(), bytes.clone());
        let mut bad = bytes;
        let i = pos.index(bad.len());
        bad[i] ^= 1 << bit;
        prop_assert!(Artifact::from_bytes(&bad).is_err());
    }
}
