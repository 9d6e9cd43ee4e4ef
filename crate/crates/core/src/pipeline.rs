//! Table → standardized, windowed, chronologically split dataset.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use std::io::Read;

use crate::ingest::{
    aggregate_to_county, apply_standardizer, build_targets, events_for_county, filter_severity, fit_standardizer,
    parse_daily_weather, parse_storm_events, AggregateConfig, CountyDayTable, DamagePolicy, SeverityPolicy, Standardizer,
    TypeMap, DEFAULT_FORWARD_WINDOW,
};
use crate::window::{chrono_split, make_windows, SplitSizes, SplitSpec, Splits};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub lookback: usize,
    pub stride: usize,
    pub forward_window: usize,
    pub split: SplitSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            lookback: 90,
            stride: 1,
            forward_window: DEFAULT_FORWARD_WINDOW,
            split: SplitSpec::default(),
        }
    }
}

/// Settings for turning raw weather and storm files into a county table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub county: String,
    /// Empty means every station in the weather file.
    pub stations: Vec<String>,
    pub aggregate: AggregateConfig,
    pub severity: SeverityPolicy,
    pub type_map: TypeMap,
    pub damage_policy: DamagePolicy,
    pub forward_window: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            county: String::new(),
            stations: Vec::new(),
            aggregate: AggregateConfig::default(),
            severity: SeverityPolicy::default(),
            type_map: TypeMap::default(),
            damage_policy: DamagePolicy::default(),
            forward_window: DEFAULT_FORWARD_WINDOW,
        }
    }
}

/// Counts reported by [`ingest_county`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub weather_records: usize,
    pub events_parsed: usize,
    pub dropped_unmapped: usize,
    pub damage_warnings: usize,
    pub events_in_county: usize,
    pub events_kept: usize,
}

/// Parses both files, aggregates the county's stations and labels each day
/// with forward-window counts of its severe events.
pub fn ingest_county<W: Read, E: Read>(weather: W, events: E, cfg: &IngestConfig) -> Result<(CountyDayTable, IngestSummary)> {
    if cfg.county.trim().is_empty() {
        return Err(Error::Config("a county name is required".into()));
    }
    let records = parse_daily_weather(weather)?;
    let mut table = aggregate_to_county(&cfg.county, &records, &cfg.stations, &cfg.aggregate)?;
    let parsed = parse_storm_events(events, &cfg.type_map, cfg.damage_policy)?;
    let in_county = events_for_county(&parsed.events, &cfg.county);
    let severe = filter_severity(&in_county, &cfg.severity);
    build_targets(&mut table, &severe, cfg.forward_window)?;
    Ok((
        table,
        IngestSummary {
            weather_records: records.len(),
            events_parsed: parsed.events.len(),
            dropped_unmapped: parsed.dropped_unmapped,
            damage_warnings: parsed.damage_warnings,
            events_in_county: in_county.len(),
            events_kept: severe.len(),
        },
    ))
}

/// Split boundaries, echoed into run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitBoundaries {
    pub sizes: SplitSizes,
    pub train_first_anchor: NaiveDate,
    pub train_last_anchor: NaiveDate,
    pub val_first_anchor: NaiveDate,
    pub val_last_anchor: NaiveDate,
    pub test_first_anchor: NaiveDate,
    pub test_last_anchor: NaiveDate,
}

pub struct Dataset {
    pub splits: Splits,
    pub standardizer: Standardizer,
    pub feature_names: Vec<String>,
    pub boundaries: SplitBoundaries,
    /// The standardized table the windows were cut from.
    pub table: CountyDayTable,
}

/// First table date through the last training anchor: every row a training
/// window reads, and nothing later.
pub fn train_date_range(table: &CountyDayTable, cfg: &DataConfig) -> Result<(NaiveDate, NaiveDate)> {
    let windows = make_windows(table, cfg.lookback, cfg.stride)?;
    let sizes = cfg.split.sizes(windows.len())?;
    Ok((table.dates[0], windows[sizes.train - 1].anchor_date))
}

/// Fits the standardizer on the training rows only, then windows and splits.
pub fn prepare_dataset(table: &CountyDayTable, cfg: &DataConfig) -> Result<Dataset> {
    if table.standardized {
        return Err(Error::Data("expected raw (unstandardized) features".into()));
    }
    if let Some(w) = table.forward_window {
        if w != cfg.forward_window {
            return Err(Error::Config(format!(
                "table targets use a {w}-day forward window, config asks for {}",
                cfg.forward_window
            )));
        }
    }
    let (start, end) = train_date_range(table, cfg)?;
    let mut fitted = table.clone();
    fit_standardizer(&mut fitted, start..=end)?;
    let standardized = apply_standardizer(&fitted)?;
    let samples = make_windows(&standardized, cfg.lookback, cfg.stride)?;
    let splits = chrono_split(samples, &cfg.split)?;
    let bounds = |s: &[crate::window::WindowSample]| (s[0].anchor_date, s[s.len() - 1].anchor_date);
    let (train_first_anchor, train_last_anchor) = bounds(&splits.train);
    let (val_first_anchor, val_last_anchor) = bounds(&splits.val);
    let (test_first_anchor, test_last_anchor) = bounds(&splits.test);
    Ok(Dataset {
        boundaries: SplitBoundaries {
            sizes: SplitSizes {
                train: splits.train.len(),
                val: splits.val.len(),
                test: splits.test.len(),
            },
            train_first_anchor,
            train_last_anchor,
            val_first_anchor,
            val_last_anchor,
            test_first_anchor,
            test_last_anchor,
        },
        splits,
        standardizer: standardized.standardizer.clone().expect("fitted"),
        feature_names: standardized.feature_names.clone(),
        table: standardized,
    })
}
