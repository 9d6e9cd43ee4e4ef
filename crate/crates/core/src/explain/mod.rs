//! Temporal Shapley explanations of hazard rates and their seasonal
//! aggregation.

mod global;
mod local;
mod shapley;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::Hazard;
use crate::ndgrad::Array;

pub use global::{
    global_aggregate, select_by_attention, select_by_magnitude, sidecar_path, AttributionMatrix, GlobalImportanceMatrix,
    Selection, SelectionMethod, MONTHS,
};
pub use local::{
    baseline_over, baseline_window, explain_cells, explain_events, explain_features, prune_events, prune_tolerance, Baseline,
    CellAttribution, CellPlayer, EventAttribution, FeatureAttribution, MaskedWindowGame, PruneResult, RateModel,
    SamplingBudget,
};
pub use shapley::{shapley, CoalitionGame, FnGame, ShapleyMode, ShapleyValues, MAX_EXACT_PLAYERS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    /// Absolute pruning tolerance; `None` uses `relative_tolerance`.
    pub prune_tolerance: Option<f64>,
    pub relative_tolerance: f64,
    pub min_tolerance: f64,
    pub nsamples: usize,
    pub top_events: usize,
    pub top_features: usize,
    pub selection: SelectionMethod,
    pub top_k: usize,
    pub attention_factor: f64,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            prune_tolerance: None,
            relative_tolerance: 0.05,
            min_tolerance: 1e-6,
            nsamples: 2000,
            top_events: 3,
            top_features: 3,
            selection: SelectionMethod::ShapMagnitude,
            top_k: 5,
            attention_factor: 1.5,
            seed: 0,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.relative_tolerance < 0.0 || self.min_tolerance < 0.0 || self.prune_tolerance.is_some_and(|t| t < 0.0) {
            return Err(Error::Config("pruning tolerances must be nonnegative".into()));
        }
        if self.top_events == 0 || self.top_features == 0 {
            return Err(Error::Config("top_events and top_features must be at least 1".into()));
        }
        if !(self.attention_factor > 0.0) {
            return Err(Error::Config("attention_factor must be positive".into()));
        }
        Ok(())
    }

    /// Parameters echoed into global matrices.
    pub fn selection_params(&self) -> serde_json::Value {
        serde_json::json!({
            "selection": self.selection,
            "top_k": self.top_k,
            "attention_factor": self.attention_factor,
            "top_events": self.top_events,
            "top_features": self.top_features,
            "nsamples": self.nsamples,
            "seed": self.seed,
        })
    }
}

/// Seed for one kernel game, fixed by instance, hazard and game kind.
pub fn instance_seed(base: u64, instance: usize, hazard: Hazard, stage: u64) -> u64 {
    // splitmix64 finaliser over a packed key
    let mut z = base
        ^ (instance as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((hazard.index() as u64) << 56)
        ^ (stage << 60);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Prunes, explains events, features and cells, and selects critical rows
/// for one window and one hazard.
#[allow(clippy::too_many_arguments)]
pub fn explain_instance<M: RateModel + ?Sized>(
    model: &M,
    window: &Array,
    dates: &[NaiveDate],
    feature_names: &[String],
    baseline: &Baseline,
    hazard: Hazard,
    attention: Option<&[f64]>,
    instance: usize,
    cfg: &ExplainConfig,
) -> Result<AttributionMatrix> {
    cfg.validate()?;
    let [len, f] = window.shape();
    if dates.len() != len || feature_names.len() != f {
        return Err(Error::Config("dates and feature names must match the window".into()));
    }
    let budget = |stage| SamplingBudget {
        nsamples: cfg.nsamples,
        seed: instance_seed(cfg.seed, instance, hazard, stage),
    };
    let prune = local::prune_with(model, window, baseline, hazard, |fx, base| {
        cfg.prune_tolerance
            .unwrap_or_else(|| prune_tolerance(fx, base, cfg.relative_tolerance, cfg.min_tolerance))
    })?;
    let events = explain_events(model, window, baseline, hazard, prune.prune_index, budget(1))?;
    let features = explain_features(model, window, baseline, hazard, budget(2))?;
    // pruned rows never compete for a top-row slot
    let mut row_scores = events.per_row();
    row_scores[..prune.prune_index].iter_mut().for_each(|s| *s = 0.0);
    let cells = explain_cells(
        model,
        window,
        baseline,
        hazard,
        &row_scores,
        &features.phi,
        cfg.top_events.min(len - prune.prune_index),
        cfg.top_features.min(f),
        budget(3),
    )?;
    let mut attr = AttributionMatrix {
        feature_names: feature_names.to_vec(),
        dates: dates.to_vec(),
        values: cells.values,
        prune_index: prune.prune_index,
        hazard,
        base_value: cells.base_value,
        fx: cells.fx,
        efficiency_gap: cells.efficiency_gap,
        players: cells.players,
        events: Some(events),
        features: Some(features),
        attention: attention.map(<[f64]>::to_vec),
        selection: None,
        instance,
    };
    let selection = match cfg.selection {
        SelectionMethod::ShapMagnitude => select_by_magnitude(&attr, cfg.top_k),
        SelectionMethod::Attention => {
            let alpha = attention.ok_or_else(|| Error::Config("attention selection needs attention weights".into()))?;
            if alpha.len() != len {
                return Err(Error::Config(format!("{} attention weights for {len} rows", alpha.len())));
            }
            select_by_attention(alpha, prune.prune_index, cfg.attention_factor)?
        }
    };
    attr.selection = Some(selection);
    Ok(attr)
}
