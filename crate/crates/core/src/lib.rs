//! Multi-hazard agricultural early warning: count forecasting from daily
//! weather sequences with attention-equipped recurrent and transformer
//! models, explained by temporal Shapley attributions.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod explain;
pub mod hazard;
pub mod ingest;
pub mod models;
pub mod ndgrad;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod training;
pub mod window;

pub use error::{Error, Result};
pub use hazard::{Hazard, HazardCounts, NUM_HAZARDS};
