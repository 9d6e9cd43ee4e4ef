//! Weather and storm-event ingestion into per-county daily tables.

mod aggregate;
mod standardize;
mod storm;
pub(crate) mod table;
mod targets;
mod weather;

pub use aggregate::{aggregate_to_county, AggregateConfig};
pub use standardize::{apply_standardizer, fit_standardizer, Standardizer, CONSTANT_STD};
pub use storm::{
    events_for_county, filter_severity, parse_damage, parse_storm_events, DamagePolicy, HazardEvent,
    SeverityPolicy, StormParse, TypeMap,
};
pub use table::{manifest_path, CountyDayTable, TableManifest};
pub use targets::{build_targets, daily_indicators, DEFAULT_FORWARD_WINDOW};
pub use weather::{parse_daily_weather, ClimateRecord};
