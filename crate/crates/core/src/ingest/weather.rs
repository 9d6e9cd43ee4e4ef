//! Daily station observations in the NOAA Climate Data Online CSV layout.

use std::io::Read;

use chrono::NaiveDate;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columns that describe the station rather than the weather.
const METADATA_COLUMNS: &[&str] = &["NAME", "LATITUDE", "LONGITUDE", "ELEVATION"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimateRecord {
    pub station_id: String,
    pub date: NaiveDate,
    /// Feature code → value in source units; `None` marks a missing cell.
    pub values: IndexMap<String, Option<f64>>,
}

impl ClimateRecord {
    pub fn get(&self, feature: &str) -> Option<f64> {
        self.values.get(feature).copied().flatten()
    }
}

pub(crate) fn parse_iso_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

fn is_feature_column(name: &str) -> bool {
    !METADATA_COLUMNS.contains(&name) && !name.ends_with("_ATTRIBUTES")
}

/// Parses a daily weather CSV. Every column other than `STATION`, `DATE`,
/// station metadata and `*_ATTRIBUTES` flags becomes a feature.
pub fn parse_daily_weather<R: Read>(source: R) -> Result<Vec<ClimateRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_ascii_uppercase())
        .collect();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Parse("weather CSV has no header row".into()));
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("weather CSV header lacks a {name} column")))
    };
    let station_col = column("STATION")?;
    let date_col = column("DATE")?;
    let features: Vec<(usize, &String)> = headers
        .iter()
        .enumerate()
        .filter(|&(i, h)| i != station_col && i != date_col && is_feature_column(h))
        .collect();

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let raw_date = row.get(date_col).unwrap_or("");
        let date = parse_iso_date(raw_date).ok_or_else(|| Error::Row {
            line,
            message: format!("malformed date {raw_date:?} (expected YYYY-MM-DD)"),
        })?;
        let mut values = IndexMap::with_capacity(features.len());
        for &(i, name) in &features {
            let cell = row.get(i).unwrap_or("").trim();
            let value = if cell.is_empty() {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|_| Error::Row {
                    line,
                    message: format!("non-numeric value {cell:?} in column {name}"),
                })?)
            };
            values.insert(name.clone(), value);
        }
        records.push(ClimateRecord {
            station_id: row.get(station_col).unwrap_or("").trim().to_string(),
            date,
            values,
        });
    }
    Ok(records)
}
