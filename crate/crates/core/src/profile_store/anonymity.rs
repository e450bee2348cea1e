use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Record};
use super::labels::LabelVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub labels: LabelVector,
    pub households: usize,
}

/// Label combinations held by fewer than `k` (but at least one) households.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub k: usize,
    pub violations: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KAnonymityPolicy {
    #[default]
    Drop,
    /// Relabel offenders to their energy-rating band (A/B, C/D, E/F/G),
    /// re-audit, then drop whatever still offends.
    CoarsenEnergyRating,
}

pub fn k_anonymity_audit(d: &Dataset, k: usize) -> AuditReport {
    let violations = d
        .label_counts()
        .iter()
        .filter(|(_, &n)| n >= 1 && n < k)
        .map(|(l, &n)| AuditEntry { labels: *l, households: n })
        .collect();
    AuditReport { k, violations }
}

pub fn enforce_k_anonymity(d: &Dataset, k: usize, policy: KAnonymityPolicy) -> Result<Dataset> {
    let offenders = offending(d, k);
    if offenders.is_empty() {
        return Ok(d.clone());
    }
    let d = match policy {
        KAnonymityPolicy::Drop => d.clone(),
        KAnonymityPolicy::CoarsenEnergyRating => {
            let records: Vec<Record> = d
                .records()
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    if offenders.contains(&r.labels) {
                        r.labels.energy_rating = r.labels.energy_rating.band();
                    }
                    r
                })
                .collect();
            Dataset::new(records)?
        }
    };
    let offenders = offending(&d, k);
    let records: Vec<Record> = d
        .into_records()
        .into_iter()
        .filter(|r| !offenders.contains(&r.labels))
        .collect();
    let out = Dataset::new(records)?;
    if !k_anonymity_audit(&out, k).is_clean() {
        return Err(Error::InvalidArgument("k-anonymity enforcement did not converge".into()));
    }
    Ok(out)
}

fn offending(d: &Dataset, k: usize) -> BTreeSet<LabelVector> {
    k_anonymity_audit(d, k).violations.into_iter().map(|e| e.labels).collect()
}
