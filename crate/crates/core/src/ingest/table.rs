//! The merged per-county daily table and its CSV + JSON manifest format.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::standardize::Standardizer;
use super::weather::parse_iso_date;
use crate::error::{Error, Result};
use crate::hazard::{Hazard, HazardCounts, NUM_HAZARDS};

#[derive(Debug, Clone, PartialEq)]
pub struct CountyDayTable {
    pub county: String,
    /// Strictly increasing, one entry per calendar day.
    pub dates: Vec<NaiveDate>,
    pub feature_names: Vec<String>,
    /// `features[d]` has one value per feature name.
    pub features: Vec<Vec<f64>>,
    /// Forward-window counts; `None` for the trailing unlabeled days.
    pub targets: Vec<Option<HazardCounts>>,
    /// Forward window the targets were built with.
    pub forward_window: Option<usize>,
    pub standardizer: Option<Standardizer>,
    /// Whether `features` currently hold z-scores.
    pub standardized: bool,
}

/// Sidecar written next to a table CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableManifest {
    pub county: String,
    pub feature_names: Vec<String>,
    pub forward_window: Option<usize>,
    pub standardized: bool,
    pub standardizer: Option<Standardizer>,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl CountyDayTable {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Number of leading rows that carry targets.
    pub fn labeled_len(&self) -> usize {
        self.targets.iter().take_while(|t| t.is_some()).count()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n.eq_ignore_ascii_case(name))
    }

    pub fn is_contiguous(&self) -> bool {
        self.dates
            .windows(2)
            .all(|w| w[1].signed_duration_since(w[0]).num_days() == 1)
    }

    pub fn manifest(&self, config: serde_json::Value) -> TableManifest {
        TableManifest {
            county: self.county.clone(),
            feature_names: self.feature_names.clone(),
            forward_window: self.forward_window,
            standardized: self.standardized,
            standardizer: self.standardizer.clone(),
            config,
        }
    }

    /// Writes `date, <features…>, target_<hazard>×6`. Unlabeled days leave
    /// the target cells empty.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["date".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.extend(Hazard::ALL.iter().map(|h| h.target_column()));
        w.write_record(&header)?;
        for (d, date) in self.dates.iter().enumerate() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(date.format("%Y-%m-%d").to_string());
            rec.extend(self.features[d].iter().map(|v| v.to_string()));
            match &self.targets[d] {
                Some(t) => rec.extend(t.iter().map(|c| c.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), NUM_HAZARDS)),
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R, manifest: Option<&TableManifest>) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(source);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("date") {
            return Err(Error::Parse("table CSV must start with a date column".into()));
        }
        let target_cols: Vec<String> = Hazard::ALL.iter().map(|h| h.target_column()).collect();
        let target_idx: Vec<usize> = target_cols
            .iter()
            .map(|c| {
                header
                    .iter()
                    .position(|h| h == c)
                    .ok_or_else(|| Error::Parse(format!("table CSV lacks column {c}")))
            })
            .collect::<Result<_>>()?;
        let feature_idx: Vec<usize> = (1..header.len()).filter(|i| !target_idx.contains(i)).collect();
        let feature_names = feature_idx.iter().map(|&i| header[i].clone()).collect();

        let mut dates = Vec::new();
        let mut features = Vec::new();
        let mut targets = Vec::new();
        for row in reader.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let err = |message: String| Error::Row { line, message };
            dates.push(parse_iso_date(&row[0]).ok_or_else(|| err(format!("bad date {:?}", &row[0])))?);
            features.push(
                feature_idx
                    .iter()
                    .map(|&i| {
                        row[i]
                            .trim()
                            .parse::<f64>()
                            .map_err(|_| err(format!("bad value {:?} in {}", &row[i], header[i])))
                    })
                    .collect::<Result<Vec<f64>>>()?,
            );
            let cells: Vec<&str> = target_idx.iter().map(|&i| row[i].trim()).collect();
            if cells.iter().all(|c| c.is_empty()) {
                targets.push(None);
            } else {
                let mut t = [0u32; NUM_HAZARDS];
                for (slot, c) in t.iter_mut().zip(&cells) {
                    *slot = c.parse().map_err(|_| err(format!("bad target count {c:?}")))?;
                }
                targets.push(Some(t));
            }
        }
        let mut table = CountyDayTable {
            county: String::new(),
            dates,
            feature_names,
            features,
            targets,
            forward_window: None,
            standardizer: None,
            standardized: false,
        };
        if let Some(m) = manifest {
            if m.feature_names != table.feature_names {
                return Err(Error::Data(
                    "table CSV columns disagree with the manifest feature list".into(),
                ));
            }
            table.county = m.county.clone();
            table.forward_window = m.forward_window;
            table.standardizer = m.standardizer.clone();
            table.standardized = m.standardized;
        }
        Ok(table)
    }

    /// Writes `<path>` and `<path>.json`.
    pub fn save(&self, path: &Path, config: serde_json::Value) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_csv(file)?;
        let manifest_path = manifest_path(path);
        let json = serde_json::to_string_pretty(&self.manifest(config))? + "\n";
        fs::write(&manifest_path, json).map_err(|e| Error::file(&manifest_path, e))?;
        Ok(())
    }

    /// Loads a table CSV; the sidecar manifest is used when present.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest_path = manifest_path(path);
        let manifest: Option<TableManifest> = if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path).map_err(|e| Error::file(&manifest_path, e))?;
            Some(serde_json::from_str(&text)?)
        } else {
            None
        };
        let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_csv(file, manifest.as_ref())
    }
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
