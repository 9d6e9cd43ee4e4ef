//! Instance-level attributions: event pruning and event, feature and cell
//! Shapley values against a baseline window.

use std::ops::RangeInclusive;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::shapley::{shapley, CoalitionGame, ShapleyMode, ShapleyValues, MAX_EXACT_PLAYERS};
use crate::error::{Error, Result};
use crate::hazard::{Hazard, NUM_HAZARDS};
use crate::ingest::CountyDayTable;
use crate::models::Model;
use crate::ndgrad::Array;

/// Anything that maps windows to six rates.
pub trait RateModel {
    fn num_features(&self) -> usize;
    fn rates(&self, windows: &[Array]) -> Result<Vec<[f64; NUM_HAZARDS]>>;
}

impl RateModel for Model {
    fn num_features(&self) -> usize {
        self.config.input_features
    }

    fn rates(&self, windows: &[Array]) -> Result<Vec<[f64; NUM_HAZARDS]>> {
        Model::rates(self, windows)
    }
}

/// The "average event": per-feature means of standardized training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub values: Vec<f64>,
}

impl Baseline {
    /// The baseline row repeated `len` times.
    pub fn window(&self, len: usize) -> Array {
        let mut data = Vec::with_capacity(len * self.values.len());
        for _ in 0..len {
            data.extend_from_slice(&self.values);
        }
        Array::from_vec(len, self.values.len(), data).expect("baseline shape")
    }
}

/// Baseline over the standardizer's own fitting range.
pub fn baseline_window(table: &CountyDayTable) -> Result<Baseline> {
    let st = table
        .standardizer
        .as_ref()
        .ok_or_else(|| Error::Data("baseline needs a fitted standardizer".into()))?;
    baseline_over(table, st.fit_start..=st.fit_end)
}

/// Baseline over an explicit date range of a standardized table.
pub fn baseline_over(table: &CountyDayTable, range: RangeInclusive<NaiveDate>) -> Result<Baseline> {
    if !table.standardized {
        return Err(Error::Data("baseline is computed on standardized features".into()));
    }
    let mut sums = vec![0.0; table.num_features()];
    let mut n = 0usize;
    for (d, row) in table.dates.iter().zip(&table.features) {
        if range.contains(d) {
            sums.iter_mut().zip(row).for_each(|(s, x)| *s += x);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("no rows in the baseline range".into()));
    }
    Ok(Baseline {
        values: sums.into_iter().map(|s| s / n as f64).collect(),
    })
}

/// Players are sets of cells; cells outside the coalition take baseline
/// values.
pub struct MaskedWindowGame<'a, M: ?Sized> {
    pub model: &'a M,
    pub window: &'a Array,
    pub baseline: &'a Array,
    pub hazard: Hazard,
    pub players: Vec<Vec<(usize, usize)>>,
}

impl<'a, M: RateModel + ?Sized> MaskedWindowGame<'a, M> {
    pub fn masked(&self, coalition: &[bool]) -> Array {
        let mut w = self.baseline.clone();
        for (cells, _) in self.players.iter().zip(coalition).filter(|(_, on)| **on) {
            for &(r, c) in cells {
                w.set(r, c, self.window.get(r, c));
            }
        }
        w
    }
}

impl<'a, M: RateModel + ?Sized> CoalitionGame for MaskedWindowGame<'a, M> {
    fn players(&self) -> usize {
        self.players.len()
    }

    fn values(&self, coalitions: &[Vec<bool>]) -> Result<Vec<f64>> {
        let windows: Vec<Array> = coalitions.iter().map(|c| self.masked(c)).collect();
        let h = self.hazard.index();
        Ok(self.model.rates(&windows)?.into_iter().map(|r| r[h]).collect())
    }
}

fn rows_cells(rows: std::ops::Range<usize>, cols: usize) -> Vec<(usize, usize)> {
    rows.flat_map(|r| (0..cols).map(move |c| (r, c))).collect()
}

fn check_inputs<M: RateModel + ?Sized>(model: &M, window: &Array, baseline: &Baseline) -> Result<()> {
    let [len, f] = window.shape();
    if len == 0 {
        return Err(Error::Data("empty window".into()));
    }
    if f != model.num_features() || baseline.values.len() != f {
        return Err(Error::Config(format!(
            "window has {f} features, model {} and baseline {}",
            model.num_features(),
            baseline.values.len()
        )));
    }
    Ok(())
}

/// Absolute pruning tolerance from the relative rule.
pub fn prune_tolerance(fx: f64, base_value: f64, relative: f64, floor: f64) -> f64 {
    (relative * (fx - base_value).abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneResult {
    pub prune_index: usize,
    pub tolerance: f64,
    /// `φ_prefix` for split `t` at position `t − 1`, `t = 1..L−1`.
    pub prefix_phi: Vec<f64>,
    pub fx: f64,
    pub base_value: f64,
}

/// For each split `t` in `1..L`, plays the two-player game {rows `[0, t)`,
/// rows `[t, L)`} and returns the largest `t` whose prefix value is within
/// `tolerance` (0 if none). `tolerance = None` applies the relative default.
pub fn prune_events<M: RateModel + ?Sized>(
    model: &M,
    window: &Array,
    baseline: &Baseline,
    hazard: Hazard,
    tolerance: Option<f64>,
) -> Result<PruneResult> {
    prune_with(model, window, baseline, hazard, |fx, base| {
        tolerance.unwrap_or_else(|| prune_tolerance(fx, base, 0.05, 1e-6))
    })
}

pub(crate) fn prune_with<M: RateModel + ?Sized>(
    model: &M,
    window: &Array,
    baseline: &Baseline,
    hazard: Hazard,
    tolerance: impl Fn(f64, f64) -> f64,
) -> Result<PruneResult> {
    check_inputs(model, window, baseline)?;
    let [len, f] = window.shape();
    let base = baseline.window(len);
    let h = hazard.index();
    // batch: baseline, full window, then prefix-only / suffix-only per split
    let mut windows = vec![base.clone(), window.clone()];
    for t in 1..len {
        let mut prefix = base.clone();
        let mut suffix = window.clone();
        for r in 0..t {
            for c in 0..f {
                prefix.set(r, c, window.get(r, c));
                suffix.set(r, c, base.get(r, c));
            }
        }
        windows.push(prefix);
        windows.push(suffix);
    }
    let v: Vec<f64> = model.rates(&windows)?.into_iter().map(|r| r[h]).collect();
    let (base_value, fx) = (v[0], v[1]);
    let eta = tolerance(fx, base_value);
    if eta < 0.0 || eta.is_nan() {
        return Err(Error::Config(format!("pruning tolerance must be nonnegative, got {eta}")));
    }
    let prefix_phi: Vec<f64> = (1..len)
        .map(|t| {
            let only_prefix = v[2 * t];
            let only_suffix = v[2 * t + 1];
            0.5 * ((only_prefix - base_value) + (fx - only_suffix))
        })
        .collect();
    let prune_index = prefix_phi
        .iter()
        .enumerate()
        .rev()
        .find(|(_, p)| p.abs() <= eta)
        .map_or(0, |(i, _)| i + 1);
    Ok(PruneResult {
        prune_index,
        tolerance: eta,
        prefix_phi,
        fx,
        base_value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAttribution {
    pub prune_index: usize,
    /// The pruned prefix as a single player, when `prune_index > 0`.
    pub prefix_phi: Option<f64>,
    /// One value per row `prune_index..L`.
    pub row_phi: Vec<f64>,
    pub base_value: f64,
    pub fx: f64,
    pub mode: ShapleyMode,
    pub efficiency_gap: f64,
}

impl EventAttribution {
    /// Per-row values over the whole window; the prefix value sits on every
    /// pruned row.
    pub fn per_row(&self) -> Vec<f64> {
        let mut out = vec![self.prefix_phi.unwrap_or(0.0); self.prune_index];
        out.extend_from_slice(&self.row_phi);
        out
    }
}

/// Kernel sample budget and seed used when a game has too many players for
/// enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingBudget {
    pub nsamples: usize,
    pub seed: u64,
}

impl Default for SamplingBudget {
    fn default() -> Self {
        SamplingBudget {
            nsamples: 2000,
            seed: 0,
        }
    }
}

pub fn explain_events<M: RateModel + ?Sized>(
    model: &M,
    window: &Array,
    baseline: &Baseline,
    hazard: Hazard,
    prune_index: usize,
    budget: SamplingBudget,
) -> Result<EventAttribution> {
    check_inputs(model, window, baseline)?;
    let [len, f] = window.shape();
    if prune_index >= len {
        return Err(Error::Config(format!("prune_index {prune_index} outside window of {len} rows")));
    }
    let base = baseline.window(len);
    let mut players = Vec::new();
    if prune_index > 0 {
        players.push(rows_cells(0..prune_index, f));
    }
    players.extend((prune_index..len).map(|r| rows_cells(r..r + 1, f)));
    let game = MaskedWindowGame {
        model,
        window,
        baseline: &base,
        hazard,
        players,
    };
    let r = solve(&game, budget)?;
    let (prefix_phi, row_phi) = if prune_index > 0 {
        (Some(r.phi[0]), r.phi[1..].to_vec())
    } else {
        (None, r.phi.clone())
    };
    Ok(EventAttribution {
        prune_index,
        prefix_phi,
        row_phi,
        base_value: r.empty_value,
        fx: r.full_value,
        mode: r.mode,
        efficiency_gap: r.efficiency_gap(),
    })
}

fn solve<G: CoalitionGame>(game: &G, budget: SamplingBudget) -> Result<ShapleyValues> {
    shapley(game, ShapleyMode::auto(game.players(), budget.nsamples, budget.seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub phi: Vec<f64>,
    pub base_value: f64,
    pub fx: f64,
    pub mode: ShapleyMode,
    pub efficiency_gap: f64,
}

/// One player per feature column.
pub fn explain_features<M: RateModel + ?Sized>(
    model: &M,
    window: &Array,
    baseline: &Baseline,
    hazard: Hazard,
    budget: SamplingBudget,
) -> Result<FeatureAttribution> {
    check_inputs(model, window, baseline)?;
    let [len, f] = window.shape();
    let base = baseline.window(len);
    let players = (0..f).map(|c| (0..len).map(|r| (r, c)).collect()).collect();
    let game = MaskedWindowGame {
        model,
        window,
        baseline: &base,
        hazard,
        players,
    };
    let r = solve(&game, budget)?;
    Ok(FeatureAttribution {
        efficiency_gap: r.efficiency_gap(),
        phi: r.phi,
        base_value: r.empty_value,
        fx: r.full_value,
        mode: r.mode,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPlayer {
    pub label: String,
    /// Number of window cells the player controls.
    pub cells: usize,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellAttribution {
    /// `L × F`; residual groups spread evenly over their cells.
    pub values: Array,
    pub players: Vec<CellPlayer>,
    pub top_rows: Vec<usize>,
    pub top_features: Vec<usize>,
    pub base_value: f64,
    pub fx: f64,
    pub mode: ShapleyMode,
    pub efficiency_gap: f64,
}

/// Indices of the `k` largest `|score|`, ties to the lower index, returned
/// ascending.
pub(crate) fn top_k_by_magnitude(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].abs().total_cmp(&scores[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Cell-level game: the `k_e · k_f` cells at the crossing of the top rows
/// (by `row_scores`) and top features (by `feature_scores`) each play alone;
/// the remaining cells form three groups: rest of the top rows, rest of the
/// top columns, everything else.
#[allow(clippy::too_many_arguments)]
pub fn explain_cells<M: RateModel + ?Sized>(
    model: &M,
    window: &Array,
    baseline: &Baseline,
    hazard: Hazard,
    row_scores: &[f64],
    feature_scores: &[f64],
    top_events: usize,
    top_features: usize,
    budget: SamplingBudget,
) -> Result<CellAttribution> {
    check_inputs(model, window, baseline)?;
    let [len, f] = window.shape();
    if top_events == 0 || top_features == 0 || top_events > len || top_features > f {
        return Err(Error::Config(format!(
            "top_events must be in 1..={len} and top_features in 1..={f}, got {top_events} and {top_features}"
        )));
    }
    if row_scores.len() != len || feature_scores.len() != f {
        return Err(Error::Config("score vectors must match the window shape".into()));
    }
    let rows = top_k_by_magnitude(row_scores, top_events);
    let cols = top_k_by_magnitude(feature_scores, top_features);
    let mut players: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut labels = Vec::new();
    for &r in &rows {
        for &c in &cols {
            players.push(vec![(r, c)]);
            labels.push(format!("cell[{r},{c}]"));
        }
    }
    let (mut in_rows, mut in_cols, mut rest) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..len {
        for c in 0..f {
            match (rows.contains(&r), cols.contains(&c)) {
                (true, true) => {}
                (true, false) => in_rows.push((r, c)),
                (false, true) => in_cols.push((r, c)),
                (false, false) => rest.push((r, c)),
            }
        }
    }
    for (label, group) in [("other_features_of_top_rows", in_rows), ("other_rows_of_top_features", in_cols), ("remainder", rest)] {
        players.push(group);
        labels.push(label.to_string());
    }
    let base = baseline.window(len);
    let game = MaskedWindowGame {
        model,
        window,
        baseline: &base,
        hazard,
        players,
    };
    let r = solve(&game, budget)?;
    let mut values = Array::zeros(len, f);
    for (cells, &phi) in game.players.iter().zip(&r.phi) {
        let share = phi / cells.len().max(1) as f64;
        for &(row, col) in cells {
            values.set(row, col, share);
        }
    }
    let players = game
        .players
        .iter()
        .zip(labels)
        .zip(&r.phi)
        .map(|((cells, label), &phi)| CellPlayer {
            label,
            cells: cells.len(),
            phi,
        })
        .collect();
    debug_assert!(game.players.len() <= MAX_EXACT_PLAYERS || !matches!(r.mode, ShapleyMode::Exact));
    Ok(CellAttribution {
        values,
        players,
        top_rows: rows,
        top_features: cols,
        base_value: r.empty_value,
        fx: r.full_value,
        efficiency_gap: r.efficiency_gap(),
        mode: r.mode,
    })
}
