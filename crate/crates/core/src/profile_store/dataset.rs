use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use super::labels::LabelVector;
use crate::error::{Error, Result};

/// Half-hourly readings per day; index 0 is 00:00, index 47 is 23:30.
pub const PERIODS: usize = 48;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HouseholdId(pub String);

impl fmt::Display for HouseholdId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One household-day of consumption in kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    household_id: HouseholdId,
    date: NaiveDate,
    readings: Vec<f64>,
}

impl LoadProfile {
    pub fn new(household_id: HouseholdId, date: NaiveDate, readings: Vec<f64>) -> Result<Self> {
        if readings.len() != PERIODS {
            return Err(Error::InvalidProfile(format!(
                "expected {PERIODS} readings, got {}",
                readings.len()
            )));
        }
        if let Some((i, r)) = readings.iter().enumerate().find(|(_, r)| !r.is_finite()) {
            return Err(Error::InvalidProfile(format!("non-finite reading {r} at period {}", i + 1)));
        }
        if let Some((i, r)) = readings.iter().enumerate().find(|(_, r)| **r < 0.0) {
            return Err(Error::InvalidProfile(format!("negative reading {r} at period {}", i + 1)));
        }
        Ok(LoadProfile { household_id, date, readings })
    }

    pub fn household_id(&self) -> &HouseholdId {
        &self.household_id
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn readings(&self) -> &[f64] {
        &self.readings
    }

    pub fn is_weekend(&self) -> bool {
        is_weekend(self.date)
    }
}

pub fn is_weekend(date: NaiveDate) -> bool {
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub profile: LoadProfile,
    pub labels: LabelVector,
}

/// Labeled profiles plus distinct-household counts per label combination.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    label_counts: BTreeMap<LabelVector, usize>,
}

impl Dataset {
    /// Builds a dataset, rejecting households whose rows carry different labels.
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let mut seen: HashMap<&HouseholdId, LabelVector> = HashMap::new();
        for r in &records {
            match seen.get(r.profile.household_id()) {
                Some(prev) if *prev != r.labels => {
                    return Err(Error::InvalidArgument(format!(
                        "household {} has inconsistent labels",
                        r.profile.household_id()
                    )))
                }
                Some(_) => {}
                None => {
                    seen.insert(r.profile.household_id(), r.labels);
                }
            }
        }
        let label_counts = count_households(&records);
        Ok(Dataset { records, label_counts })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn into_records(self) -> Vec<Record> {
        self.records
    }

    pub fn label_counts(&self) -> &BTreeMap<LabelVector, usize> {
        &self.label_counts
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct households in sorted order.
    pub fn households(&self) -> Vec<HouseholdId> {
        self.records
            .iter()
            .map(|r| r.profile.household_id().clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn household_count(&self) -> usize {
        self.label_counts.values().sum()
    }

    /// Keeps records whose household satisfies `keep`.
    pub fn filter_households(&self, mut keep: impl FnMut(&HouseholdId) -> bool) -> Dataset {
        let records: Vec<Record> = self
            .records
            .iter()
            .filter(|r| keep(r.profile.household_id()))
            .cloned()
            .collect();
        let label_counts = count_households(&records);
        Dataset { records, label_counts }
    }
}

/// Recomputes distinct-household counts per full label combination.
pub fn count_households(records: &[Record]) -> BTreeMap<LabelVector, usize> {
    let mut sets: BTreeMap<LabelVector, BTreeSet<&HouseholdId>> = BTreeMap::new();
    for r in records {
        sets.entry(r.labels).or_default().insert(r.profile.household_id());
    }
    sets.into_iter().map(|(k, v)| (k, v.len())).collect()
}
