//! Labeled daily load profiles: data model, CSV ingestion, normalization,
//! k-anonymity auditing and household-level splitting.

mod anonymity;
mod csv_io;
mod dataset;
mod labels;
mod normalize;
mod split;

pub use anonymity::{enforce_k_anonymity, k_anonymity_audit, AuditEntry, AuditReport, KAnonymityPolicy};
pub use csv_io::{header as csv_header, ingest_csv, read_csv, write_csv};
pub use dataset::{count_households, is_weekend, Dataset, HouseholdId, LoadProfile, Record, PERIODS};
pub use labels::{Condition, EnergyRating, LabelLayout, LabelVector, PropertyType, LABEL_DIM};
pub use normalize::{fit_normalization, NormalizationParams, NormalizationScheme, SCALE_FLOOR};
pub use split::split_holdout;
