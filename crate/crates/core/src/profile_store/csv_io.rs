//! Reading and writing the labeled profile CSV schema:
//! `household_id,date,has_ev,has_heat_pump,smart_tariff,property_type,energy_rating,r01,...,r48`.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::dataset::{Dataset, HouseholdId, LoadProfile, Record, PERIODS};
use super::labels::{EnergyRating, LabelVector, PropertyType};
use crate::error::{Error, Result};

const LABEL_COLUMNS: [&str; 7] = [
    "household_id",
    "date",
    "has_ev",
    "has_heat_pump",
    "smart_tariff",
    "property_type",
    "energy_rating",
];

pub fn header() -> Vec<String> {
    LABEL_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((1..=PERIODS).map(|i| format!("r{i:02}")))
        .collect()
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_csv(std::fs::File::open(path)?)
}

/// Parses the schema from any reader. Row numbers in errors count data rows from 1.
pub fn read_csv(reader: impl Read) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let expected = header();
    let found: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if found != expected {
        return Err(Error::MalformedRow {
            row: 0,
            column: "header".into(),
            message: format!("expected {} columns starting with household_id,date,...", expected.len()),
        });
    }

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let malformed = |column: &str, message: String| Error::MalformedRow {
            row: row_no,
            column: column.to_string(),
            message,
        };
        if row.len() != expected.len() {
            return Err(malformed(
                "readings",
                format!(
                    "expected {PERIODS} readings, found {}",
                    row.len().saturating_sub(LABEL_COLUMNS.len())
                ),
            ));
        }
        let field = |idx: usize| row.get(idx).unwrap_or("").trim();

        let household_id = field(0);
        if household_id.is_empty() {
            return Err(malformed("household_id", "empty identifier".into()));
        }
        let date = NaiveDate::parse_from_str(field(1), "%Y-%m-%d")
            .map_err(|e| malformed("date", format!("invalid ISO-8601 date {:?}: {e}", field(1))))?;
        let mut flags = [false; 3];
        for (k, flag) in flags.iter_mut().enumerate() {
            *flag = match field(2 + k) {
                "0" => false,
                "1" => true,
                other => {
                    return Err(malformed(LABEL_COLUMNS[2 + k], format!("expected 0 or 1, got {other:?}")))
                }
            };
        }
        let property_type: PropertyType = field(5).parse().map_err(|e: Error| row_err(row_no, "property_type", e))?;
        let energy_rating: EnergyRating = field(6).parse().map_err(|e: Error| row_err(row_no, "energy_rating", e))?;

        let mut readings = Vec::with_capacity(PERIODS);
        for p in 0..PERIODS {
            let col = LABEL_COLUMNS.len() + p;
            let name = format!("r{:02}", p + 1);
            let v: f64 = field(col)
                .parse()
                .map_err(|_| malformed(&name, format!("not a number: {:?}", field(col))))?;
            if !v.is_finite() {
                return Err(malformed(&name, "non-finite reading".into()));
            }
            if v < 0.0 {
                return Err(malformed(&name, format!("negative reading {v}")));
            }
            readings.push(v);
        }

        let profile = LoadProfile::new(HouseholdId(household_id.to_string()), date, readings)
            .map_err(|e| malformed("readings", e.to_string()))?;
        records.push(Record {
            profile,
            labels: LabelVector {
                has_ev: flags[0],
                has_heat_pump: flags[1],
                smart_tariff: flags[2],
                property_type,
                energy_rating,
            },
        });
    }
    Dataset::new(records)
}

fn row_err(row: usize, column: &str, e: Error) -> Error {
    Error::MalformedRow {
        row,
        column: column.to_string(),
        message: e.to_string(),
    }
}

/// Writes records in the schema; readings use shortest round-trip decimal form.
pub fn write_csv<'a>(writer: impl Write, records: impl IntoIterator<Item = &'a Record>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header())?;
    for r in records {
        let l = &r.labels;
        let mut row: Vec<String> = vec![
            r.profile.household_id().0.clone(),
            r.profile.date().format("%Y-%m-%d").to_string(),
            bit(l.has_ev),
            bit(l.has_heat_pump),
            bit(l.smart_tariff),
            l.property_type.token().to_string(),
            l.energy_rating.token().to_string(),
        ];
        row.extend(r.profile.readings().iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn bit(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, readings: &[f64]) -> String {
        let r: Vec<String> = readings.iter().map(|v| v.to_string()).collect();
        format!("{id},2021-05-04,1,0,1,terraced,c,{}\n", r.join(","))
    }

    fn doc(rows: &[String]) -> String {
        let mut s = header().join(",");
        s.push('\n');
        for r in rows {
            s.push_str(r);
        }
        s
    }

    #[test]
    fn well_formed_three_rows() {
        let text = doc(&[row("a", &[0.1; 48]), row("b", &[0.2; 48]), row("c", &[0.3; 48])]);
        let d = read_csv(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.records()[1].labels.property_type, PropertyType::Terraced);
        assert!(d.records()[0].labels.has_ev && !d.records()[0].labels.has_heat_pump);
    }

    #[test]
    fn short_row_names_row() {
        let text = doc(&[row("a", &[0.1; 48]), row("b", &[0.1; 47])]);
        let err = read_csv(text.as_bytes()).unwrap_err();
        match err {
            Error::MalformedRow { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn negative_reading_rejected() {
        let mut r = [0.1; 48];
        r[10] = -0.5;
        let err = read_csv(doc(&[row("a", &r)]).as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("negative reading"), "{msg}");
        assert!(msg.contains("r11"), "{msg}");
    }

    #[test]
    fn unknown_enum_value() {
        let text = doc(&[row("a", &[0.1; 48]).replace("terraced", "castle")]);
        let msg = read_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(msg.contains("property_type") && msg.contains("castle"), "{msg}");
    }

    #[test]
    fn missing_file() {
        assert!(matches!(ingest_csv("/nonexistent/x.csv"), Err(Error::MissingFile(_))));
    }

    #[test]
    fn write_then_read() {
        let text = doc(&[row("a", &[0.125; 48]), row("b", &[1.5; 48])]);
        let d = read_csv(text.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_csv(&mut out, d.records()).unwrap();
        assert_eq!(read_csv(out.as_slice()).unwrap(), d);
    }
}
