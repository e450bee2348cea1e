use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, HouseholdId};
use crate::error::{Error, Result};

/// Splits by household. The holdout gets `round(fraction * households)`,
/// raised to at least one; either side ending up empty is an error.
pub fn split_holdout(d: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("holdout fraction {fraction} not in (0, 1)")));
    }
    let mut households = d.households();
    let n = households.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 households to split, have {n}")));
    }
    let n_hold = ((fraction * n as f64).round() as usize).max(1);
    if n_hold >= n {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction {fraction} leaves no training households out of {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    households.shuffle(&mut rng);
    let holdout: BTreeSet<HouseholdId> = households.into_iter().take(n_hold).collect();
    let train = d.filter_households(|h| !holdout.contains(h));
    let test = d.filter_households(|h| holdout.contains(h));
    Ok((train, test))
}
