use chrono::Days;
use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use super::table::CountyDayTable;
use super::weather::ClimateRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregateConfig {
    /// Features missing on a larger fraction of days are dropped.
    pub max_missing_frac: f64,
    /// Longest interior gap that is filled by linear interpolation.
    pub max_gap_days: usize,
    /// Largest lookback length the table will be windowed with; the table
    /// must span at least twice this many days.
    pub max_sequence_length: usize,
}

impl Default for AggregateConfig {
    fn default() -> Self {
        AggregateConfig {
            max_missing_frac: 0.1,
            max_gap_days: 3,
            max_sequence_length: 90,
        }
    }
}

/// Merges station records into one gap-free daily table for `county`.
///
/// Only records from `station_ids` are used; an empty list means all
/// stations. Targets are left unset.
pub fn aggregate_to_county(
    county: &str,
    records: &[ClimateRecord],
    station_ids: &[String],
    config: &AggregateConfig,
) -> Result<CountyDayTable> {
    if !(0.0..=1.0).contains(&config.max_missing_frac) {
        return Err(Error::Config(format!(
            "max_missing_frac must lie in [0, 1], got {}",
            config.max_missing_frac
        )));
    }
    let selected: Vec<&ClimateRecord> = records
        .iter()
        .filter(|r| station_ids.is_empty() || station_ids.iter().any(|s| s == &r.station_id))
        .collect();
    let (Some(first), Some(last)) = (
        selected.iter().map(|r| r.date).min(),
        selected.iter().map(|r| r.date).max(),
    ) else {
        return Err(Error::Data("no weather records for the selected stations".into()));
    };

    let names: IndexSet<&String> = selected.iter().flat_map(|r| r.values.keys()).collect();
    let n_days = (last - first).num_days() as usize + 1;
    let mut sums = vec![vec![0.0; names.len()]; n_days];
    let mut counts = vec![vec![0usize; names.len()]; n_days];
    for r in &selected {
        let d = (r.date - first).num_days() as usize;
        for (name, value) in &r.values {
            if let (Some(v), Some(f)) = (value, names.get_index_of(name)) {
                sums[d][f] += v;
                counts[d][f] += 1;
            }
        }
    }

    let mut columns: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    for (f, name) in names.iter().enumerate() {
        let col: Vec<Option<f64>> = (0..n_days)
            .map(|d| (counts[d][f] > 0).then(|| sums[d][f] / counts[d][f] as f64))
            .collect();
        let missing = col.iter().filter(|v| v.is_none()).count() as f64 / n_days as f64;
        if missing <= config.max_missing_frac {
            columns.push(((*name).clone(), col));
        }
    }
    if columns.is_empty() {
        return Err(Error::Data(format!(
            "every feature is missing on more than {:.1}% of days",
            config.max_missing_frac * 100.0
        )));
    }
    for (_, col) in &mut columns {
        interpolate_gaps(col, config.max_gap_days);
    }

    let mut dates = Vec::new();
    let mut features = Vec::new();
    for d in 0..n_days {
        let row: Option<Vec<f64>> = columns.iter().map(|(_, c)| c[d]).collect();
        if let Some(row) = row {
            dates.push(first + Days::new(d as u64));
            features.push(row);
        }
    }
    let table = CountyDayTable {
        county: county.to_string(),
        targets: vec![None; dates.len()],
        dates,
        feature_names: columns.into_iter().map(|(n, _)| n).collect(),
        features,
        forward_window: None,
        standardizer: None,
        standardized: false,
    };
    if !table.is_contiguous() {
        let gap = table
            .dates
            .windows(2)
            .find(|w| (w[1] - w[0]).num_days() != 1)
            .map(|w| (w[0], w[1]));
        let (a, b) = gap.unwrap_or((first, last));
        return Err(Error::Data(format!(
            "unfillable gap in weather data between {a} and {b}; \
             raise max_gap_days or drop the sparse feature"
        )));
    }
    let min_days = 2 * config.max_sequence_length;
    if table.len() < min_days {
        return Err(Error::Data(format!(
            "county table spans {} complete days; at least {min_days} (twice the sequence length {}) are required",
            table.len(),
            config.max_sequence_length
        )));
    }
    Ok(table)
}

/// Fills interior runs of at most `max_gap` missing values by linear
/// interpolation between the nearest present neighbours.
fn interpolate_gaps(col: &mut [Option<f64>], max_gap: usize) {
    let mut prev: Option<usize> = None;
    for i in 0..col.len() {
        let Some(right) = col[i] else { continue };
        if let Some(p) = prev {
            let gap = i - p - 1;
            if gap > 0 && gap <= max_gap {
                let left = col[p].expect("previous present value");
                for (k, slot) in col.iter_mut().enumerate().take(i).skip(p + 1) {
                    let w = (k - p) as f64 / (i - p) as f64;
                    *slot = Some(left + w * (right - left));
                }
            }
        }
        prev = Some(i);
    }
}
