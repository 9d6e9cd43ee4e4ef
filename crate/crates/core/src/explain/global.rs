//! Attribution matrices, critical-segment selection and the seasonal
//! feature × month aggregate.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::local::{CellPlayer, EventAttribution, FeatureAttribution};
use crate::error::{Error, Result};
use crate::hazard::Hazard;
use crate::ndgrad::Array;

pub const MONTHS: [&str; 12] = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];

/// Signed per-cell attributions for one window and one hazard.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix {
    pub feature_names: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// `L × F`.
    pub values: Array,
    pub prune_index: usize,
    pub hazard: Hazard,
    pub base_value: f64,
    pub fx: f64,
    pub efficiency_gap: f64,
    pub players: Vec<CellPlayer>,
    pub events: Option<EventAttribution>,
    pub features: Option<FeatureAttribution>,
    /// The model's attention over the window rows, when it has one.
    pub attention: Option<Vec<f64>>,
    pub selection: Option<Selection>,
    /// Position of the window in the explained sample list.
    pub instance: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    ShapMagnitude,
    Attention,
}

impl std::str::FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "shap_magnitude" | "shap" => Ok(SelectionMethod::ShapMagnitude),
            "attention" => Ok(SelectionMethod::Attention),
            other => Err(Error::Config(format!(
                "unknown selection method {other:?} (shap_magnitude, attention)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub method: SelectionMethod,
    /// Ascending row indices.
    pub rows: Vec<usize>,
    /// True when the rule selected nothing and the single maximal row was
    /// used instead.
    pub fallback: bool,
}

/// Index of the maximum of `scores[from..]`, earliest on ties.
fn argmax_from(scores: &[f64], from: usize) -> usize {
    (from..scores.len())
        .fold(None, |best: Option<usize>, i| match best {
            Some(b) if scores[b] >= scores[i] => Some(b),
            _ => Some(i),
        })
        .expect("non-empty range")
}

/// Top-`k` rows in `[prune_index, L)` by `Σ_f |values[t, f]|`; ties favour
/// the earlier row.
pub fn select_by_magnitude(attr: &AttributionMatrix, k: usize) -> Selection {
    let len = attr.values.rows();
    let scores: Vec<f64> = (0..len)
        .map(|r| attr.values.row(r).iter().map(|v| v.abs()).sum())
        .collect();
    let mut idx: Vec<usize> = (attr.prune_index..len).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    if idx.is_empty() {
        return Selection {
            method: SelectionMethod::ShapMagnitude,
            rows: vec![argmax_from(&scores, attr.prune_index)],
            fallback: true,
        };
    }
    Selection {
        method: SelectionMethod::ShapMagnitude,
        rows: idx,
        fallback: false,
    }
}

/// Rows in `[prune_index, L)` with `α_t ≥ c / L`.
pub fn select_by_attention(alpha: &[f64], prune_index: usize, factor: f64) -> Result<Selection> {
    let len = alpha.len();
    if prune_index >= len {
        return Err(Error::Config(format!("prune_index {prune_index} outside {len} attention weights")));
    }
    let threshold = factor / len as f64;
    let rows: Vec<usize> = (prune_index..len).filter(|&t| alpha[t] >= threshold).collect();
    Ok(if rows.is_empty() {
        Selection {
            method: SelectionMethod::Attention,
            rows: vec![argmax_from(alpha, prune_index)],
            fallback: true,
        }
    } else {
        Selection {
            method: SelectionMethod::Attention,
            rows,
            fallback: false,
        }
    })
}

/// Feature × calendar-month sums of absolute attributions over selected rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportanceMatrix {
    pub feature_names: Vec<String>,
    /// `F` rows of 12 monthly sums.
    pub values: Vec<[f64; 12]>,
    /// Instances with at least one selected row in each month.
    pub counts: [usize; 12],
    pub instances: usize,
    pub selection_method: Option<SelectionMethod>,
    pub hazard: Option<Hazard>,
    #[serde(default)]
    pub params: serde_json::Value,
}

impl GlobalImportanceMatrix {
    pub fn empty(feature_names: Vec<String>) -> Self {
        let f = feature_names.len();
        GlobalImportanceMatrix {
            feature_names,
            values: vec![[0.0; 12]; f],
            counts: [0; 12],
            instances: 0,
            selection_method: None,
            hazard: None,
            params: serde_json::Value::Null,
        }
    }

    /// Adds one instance's selected rows.
    pub fn add(&mut self, attr: &AttributionMatrix, selection: &Selection) -> Result<()> {
        if attr.feature_names != self.feature_names {
            return Err(Error::Data(format!(
                "instance {} features {:?} differ from {:?}",
                attr.instance, attr.feature_names, self.feature_names
            )));
        }
        let mut seen = [false; 12];
        for &t in &selection.rows {
            if t >= attr.values.rows() {
                return Err(Error::Data(format!("selected row {t} outside the window")));
            }
            let m = attr.dates[t].month0() as usize;
            seen[m] = true;
            for (f, v) in attr.values.row(t).iter().enumerate() {
                self.values[f][m] += v.abs();
            }
        }
        for (c, s) in self.counts.iter_mut().zip(seen) {
            *c += s as usize;
        }
        self.instances += 1;
        self.selection_method = merge_tag(self.selection_method, Some(selection.method), self.instances == 1);
        self.hazard = merge_tag(self.hazard, Some(attr.hazard), self.instances == 1);
        Ok(())
    }

    /// Sum of two aggregates over disjoint instance sets.
    pub fn merge(&self, other: &GlobalImportanceMatrix) -> Result<GlobalImportanceMatrix> {
        if self.feature_names != other.feature_names {
            return Err(Error::Data("cannot merge matrices over different features".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            for m in 0..12 {
                a[m] += b[m];
            }
        }
        for m in 0..12 {
            out.counts[m] += other.counts[m];
        }
        out.instances += other.instances;
        let first = self.instances == 0;
        out.selection_method = merge_tag(self.selection_method, other.selection_method, first);
        out.hazard = merge_tag(self.hazard, other.hazard, first);
        Ok(out)
    }

    /// `G[f][m] / counts[m]` (0 where no instance contributed); a display
    /// choice, not stored.
    pub fn per_instance_mean(&self) -> Vec<[f64; 12]> {
        self.values
            .iter()
            .map(|row| {
                let mut out = [0.0; 12];
                for m in 0..12 {
                    if self.counts[m] > 0 {
                        out[m] = row[m] / self.counts[m] as f64;
                    }
                }
                out
            })
            .collect()
    }
}

fn merge_tag<T: PartialEq + Copy>(current: Option<T>, incoming: Option<T>, first: bool) -> Option<T> {
    if first {
        incoming
    } else if current == incoming {
        current
    } else {
        None
    }
}

/// `G[f][m] = Σ_i Σ_{t ∈ sel_i, month(t) = m} |values_i[t, f]|`.
pub fn global_aggregate<'a>(
    instances: impl IntoIterator<Item = (&'a AttributionMatrix, &'a Selection)>,
) -> Result<GlobalImportanceMatrix> {
    let mut iter = instances.into_iter().peekable();
    let first = iter
        .peek()
        .ok_or_else(|| Error::Data("no instances to aggregate".into()))?;
    let mut g = GlobalImportanceMatrix::empty(first.0.feature_names.clone());
    for (attr, sel) in iter {
        g.add(attr, sel)?;
    }
    Ok(g)
}

/// `<csv>.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Serialize, Deserialize)]
struct AttributionSidecar {
    instance: usize,
    hazard: Hazard,
    prune_index: usize,
    base_value: f64,
    fx: f64,
    efficiency_gap: f64,
    players: Vec<CellPlayer>,
    events: Option<EventAttribution>,
    features: Option<FeatureAttribution>,
    attention: Option<Vec<f64>>,
    selection: Option<Selection>,
}

impl AttributionMatrix {
    /// CSV `date,<features…>` plus a JSON sidecar at `<path>.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut header = vec!["date".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for (r, d) in self.dates.iter().enumerate() {
            let mut rec = vec![d.format("%Y-%m-%d").to_string()];
            rec.extend(self.values.row(r).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        let side = AttributionSidecar {
            instance: self.instance,
            hazard: self.hazard,
            prune_index: self.prune_index,
            base_value: self.base_value,
            fx: self.fx,
            efficiency_gap: self.efficiency_gap,
            players: self.players.clone(),
            events: self.events.clone(),
            features: self.features.clone(),
            attention: self.attention.clone(),
            selection: self.selection.clone(),
        };
        write_json(&sidecar_path(path), &side)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        let mut rdr = csv::Reader::from_reader(BufReader::new(file));
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("date") {
            return Err(Error::Parse(format!("{}: first column must be date", path.display())));
        }
        let feature_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut dates = Vec::new();
        let mut data = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            let d = NaiveDate::parse_from_str(rec.get(0).unwrap_or(""), "%Y-%m-%d").map_err(|e| Error::Row {
                line,
                message: format!("bad date: {e}"),
            })?;
            dates.push(d);
            if rec.len() != feature_names.len() + 1 {
                return Err(Error::Row {
                    line,
                    message: format!("expected {} fields, found {}", feature_names.len() + 1, rec.len()),
                });
            }
            for field in rec.iter().skip(1) {
                data.push(field.trim().parse::<f64>().map_err(|e| Error::Row {
                    line,
                    message: format!("bad value {field:?}: {e}"),
                })?);
            }
        }
        let values = Array::from_vec(dates.len(), feature_names.len(), data)?;
        let side: AttributionSidecar = read_json(&sidecar_path(path))?;
        Ok(AttributionMatrix {
            feature_names,
            dates,
            values,
            prune_index: side.prune_index,
            hazard: side.hazard,
            base_value: side.base_value,
            fx: side.fx,
            efficiency_gap: side.efficiency_gap,
            players: side.players,
            events: side.events,
            features: side.features,
            attention: side.attention,
            selection: side.selection,
            instance: side.instance,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct GlobalSidecar {
    counts: [usize; 12],
    instances: usize,
    selection_method: Option<SelectionMethod>,
    hazard: Option<Hazard>,
    #[serde(default)]
    params: serde_json::Value,
}

impl GlobalImportanceMatrix {
    /// CSV `feature,Jan..Dec` plus a JSON sidecar at `<path>.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut header = vec!["feature"];
        header.extend(MONTHS);
        w.write_record(&header)?;
        for (name, row) in self.feature_names.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        let side = GlobalSidecar {
            counts: self.counts,
            instances: self.instances,
            selection_method: self.selection_method,
            hazard: self.hazard,
            params: self.params.clone(),
        };
        write_json(&sidecar_path(path), &side)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        let mut rdr = csv::Reader::from_reader(BufReader::new(file));
        let header = rdr.headers()?.clone();
        let expected: Vec<&str> = std::iter::once("feature").chain(MONTHS).collect();
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Parse(format!("{}: header must be feature,Jan..Dec", path.display())));
        }
        let mut feature_names = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            feature_names.push(rec.get(0).unwrap_or("").to_string());
            let mut row = [0.0; 12];
            for (m, slot) in row.iter_mut().enumerate() {
                let field = rec.get(m + 1).unwrap_or("");
                *slot = field.trim().parse().map_err(|e| Error::Row {
                    line,
                    message: format!("bad value {field:?}: {e}"),
                })?;
            }
            values.push(row);
        }
        let side: GlobalSidecar = read_json(&sidecar_path(path))?;
        Ok(GlobalImportanceMatrix {
            feature_names,
            values,
            counts: side.counts,
            instances: side.instances,
            selection_method: side.selection_method,
            hazard: side.hazard,
            params: side.params,
        })
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::file(path, e))?;
    w.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}
