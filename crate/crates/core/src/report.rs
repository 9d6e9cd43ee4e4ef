//! Metric tables, SVG heatmaps and warning probabilities.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub region: String,
    pub architecture: String,
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    Mae,
    Rmse,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Mae => "MAE",
            MetricKind::Rmse => "RMSE",
        }
    }
}

/// A minimum shared by several architectures in one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tie {
    pub region: String,
    pub metric: MetricKind,
    pub architectures: Vec<String>,
}

/// Regions × architectures, with the per-row minimum of each metric flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// In order of first appearance.
    pub regions: Vec<String>,
    pub architectures: Vec<String>,
    /// `cells[region][arch]`.
    pub cells: Vec<Vec<Option<(f64, f64)>>>,
    /// Flagged architecture index per region for MAE and RMSE.
    pub best_mae: Vec<Option<usize>>,
    pub best_rmse: Vec<Option<usize>>,
    pub ties: Vec<Tie>,
}

/// Values as printed: four decimals.
pub fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

fn push_unique(list: &mut Vec<String>, item: &str) -> usize {
    match list.iter().position(|x| x == item) {
        Some(i) => i,
        None => {
            list.push(item.to_string());
            list.len() - 1
        }
    }
}

/// Flags each row's minimum at the printed precision; on a tie the earlier
/// column is flagged and the tie is recorded.
pub fn report_metrics(entries: &[MetricEntry]) -> Result<MetricsReport> {
    if entries.is_empty() {
        return Err(Error::Data("no metrics to report".into()));
    }
    let mut regions = Vec::new();
    let mut architectures = Vec::new();
    for e in entries {
        push_unique(&mut regions, &e.region);
        push_unique(&mut architectures, &e.architecture);
    }
    let mut cells = vec![vec![None; architectures.len()]; regions.len()];
    for e in entries {
        let r = push_unique(&mut regions, &e.region);
        let a = push_unique(&mut architectures, &e.architecture);
        if cells[r][a].is_some() {
            return Err(Error::Data(format!("duplicate entry for {} / {}", e.region, e.architecture)));
        }
        cells[r][a] = Some((e.mae, e.rmse));
    }
    let mut ties = Vec::new();
    let mut best = |metric: MetricKind| -> Vec<Option<usize>> {
        cells
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let shown: Vec<Option<f64>> = row
                    .iter()
                    .map(|c| {
                        c.map(|(mae, rmse)| {
                            let v = if metric == MetricKind::Mae { mae } else { rmse };
                            fmt4(v).parse::<f64>().unwrap_or(v)
                        })
                    })
                    .collect();
                let min = shown.iter().flatten().copied().fold(f64::INFINITY, f64::min);
                let at: Vec<usize> = (0..shown.len()).filter(|&a| shown[a] == Some(min)).collect();
                if at.len() > 1 {
                    ties.push(Tie {
                        region: regions[r].clone(),
                        metric,
                        architectures: at.iter().map(|&a| architectures[a].clone()).collect(),
                    });
                }
                at.first().copied()
            })
            .collect()
    };
    let best_mae = best(MetricKind::Mae);
    let best_rmse = best(MetricKind::Rmse);
    Ok(MetricsReport {
        regions,
        architectures,
        cells,
        best_mae,
        best_rmse,
        ties,
    })
}

impl MetricsReport {
    pub fn flagged(&self, region: &str, metric: MetricKind) -> Option<&str> {
        let r = self.regions.iter().position(|x| x == region)?;
        let best = match metric {
            MetricKind::Mae => self.best_mae[r],
            MetricKind::Rmse => self.best_rmse[r],
        }?;
        Some(&self.architectures[best])
    }

    /// `region,<arch>_MAE,<arch>_RMSE,…,best_MAE,best_RMSE`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["region".to_string()];
        for a in &self.architectures {
            header.push(format!("{a}_MAE"));
            header.push(format!("{a}_RMSE"));
        }
        header.push("best_MAE".into());
        header.push("best_RMSE".into());
        w.write_record(&header)?;
        for (r, region) in self.regions.iter().enumerate() {
            let mut rec = vec![region.clone()];
            for c in &self.cells[r] {
                match c {
                    Some((mae, rmse)) => {
                        rec.push(fmt4(*mae));
                        rec.push(fmt4(*rmse));
                    }
                    None => rec.extend([String::new(), String::new()]),
                }
            }
            let name = |b: Option<usize>| b.map(|i| self.architectures[i].clone()).unwrap_or_default();
            rec.push(name(self.best_mae[r]));
            rec.push(name(self.best_rmse[r]));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("utf-8 csv"))
    }

    /// Aligned text table; `*` marks the per-row minimum.
    pub fn to_text(&self) -> String {
        let mut header = vec!["Region".to_string()];
        for a in &self.architectures {
            header.push(format!("{a} MAE"));
            header.push(format!("{a} RMSE"));
        }
        let mut rows = vec![header];
        for (r, region) in self.regions.iter().enumerate() {
            let mut row = vec![region.clone()];
            for (a, c) in self.cells[r].iter().enumerate() {
                let mark = |best: Option<usize>| if best == Some(a) { "*" } else { " " };
                match c {
                    Some((mae, rmse)) => {
                        row.push(format!("{}{}", fmt4(*mae), mark(self.best_mae[r])));
                        row.push(format!("{}{}", fmt4(*rmse), mark(self.best_rmse[r])));
                    }
                    None => row.extend(["-".to_string(), "-".to_string()]),
                }
            }
            rows.push(row);
        }
        let cols = rows[0].len();
        let widths: Vec<usize> = (0..cols).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, cell)| if c == 0 { format!("{cell:<w$}", w = widths[c]) } else { format!("{cell:>w$}", w = widths[c]) })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
                out.push('\n');
            }
        }
        out.push_str("* lowest value in the row\n");
        for t in &self.ties {
            let _ = writeln!(out, "tie: {} {} shared by {}", t.region, t.metric.name(), t.architectures.join(", "));
        }
        out
    }
}

/// `P(at least one event) = 1 − exp(−λ)`.
pub fn warning_probability(rate: f64) -> Result<f64> {
    if rate.is_nan() || rate < 0.0 {
        return Err(Error::Data(format!("rate must be nonnegative, got {rate}")));
    }
    Ok(-(-rate).exp_m1())
}

pub fn warning_probabilities<const N: usize>(rates: &[f64; N]) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    for (o, &r) in out.iter_mut().zip(rates) {
        *o = warning_probability(r)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorScale {
    Linear,
    Log1p,
}

impl std::str::FromStr for ColorScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(ColorScale::Linear),
            "log1p" => Ok(ColorScale::Log1p),
            other => Err(Error::Config(format!("unknown color scale {other:?} (linear, log1p)"))),
        }
    }
}

/// A labelled numeric table read from CSV: the first column holds row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub corner: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

pub fn read_matrix_csv<R: Read>(source: R) -> Result<LabeledMatrix> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Parse("matrix CSV needs a label column and at least one value column".into()));
    }
    let col_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut row_labels = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        if rec.len() != header.len() {
            return Err(Error::Row {
                line,
                message: format!("ragged row: {} fields, header has {}", rec.len(), header.len()),
            });
        }
        row_labels.push(rec.get(0).unwrap_or("").to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::Row {
                    line,
                    message: format!("bad value {f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        values.push(row);
    }
    Ok(LabeledMatrix {
        corner: header.get(0).unwrap_or("").to_string(),
        row_labels,
        col_labels,
        values,
    })
}

const LIGHT: [f64; 3] = [255.0, 255.0, 255.0];
const DARK: [f64; 3] = [8.0, 48.0, 107.0];

/// Position on the colour ramp, in `[0, 1]`, of `|value|` against `max_abs`.
pub fn color_level(value: f64, max_abs: f64, scale: ColorScale) -> f64 {
    if !(max_abs > 0.0) {
        return 0.0;
    }
    let t = match scale {
        ColorScale::Linear => value.abs() / max_abs,
        ColorScale::Log1p => value.abs().ln_1p() / max_abs.ln_1p(),
    };
    t.clamp(0.0, 1.0)
}

/// White at 0 to dark blue at 1.
pub fn ramp_color(level: f64) -> String {
    let c: Vec<u8> = LIGHT
        .iter()
        .zip(DARK)
        .map(|(l, d)| (l + (d - l) * level).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One rect per cell, coloured by magnitude; row and column labels and a
/// legend bar.
pub fn render_heatmap(m: &LabeledMatrix, scale: ColorScale, title: &str) -> Result<String> {
    let rows = m.values.len();
    let cols = m.col_labels.len();
    if rows == 0 || cols == 0 {
        return Err(Error::Data("cannot render an empty matrix".into()));
    }
    if let Some(i) = m.values.iter().position(|r| r.len() != cols) {
        return Err(Error::Data(format!(
            "ragged matrix: row {i} has {} values, expected {cols}",
            m.values[i].len()
        )));
    }
    if m.row_labels.len() != rows {
        return Err(Error::Data("row label count differs from row count".into()));
    }
    let max_abs = m.values.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let (cw, ch) = (44.0, if rows > 40 { 8.0 } else { 16.0 });
    let label_w = 10.0 + 7.0 * m.row_labels.iter().map(|l| l.chars().count()).max().unwrap_or(0) as f64;
    let top = 60.0;
    let grid_w = cw * cols as f64;
    let grid_h = ch * rows as f64;
    let legend_x = label_w + grid_w + 20.0;
    let width = legend_x + 90.0;
    let height = top + grid_h + 20.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(s, r#"<text x="{label_w:.1}" y="18" font-size="13">{}</text>"#, escape(title));
    for (c, label) in m.col_labels.iter().enumerate() {
        let x = label_w + cw * (c as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            top - 6.0,
            escape(label)
        );
    }
    let label_every = if rows > 40 { 7 } else { 1 };
    for (r, row) in m.values.iter().enumerate() {
        let y = top + ch * r as f64;
        if r % label_every == 0 {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="{}" text-anchor="end">{}</text>"#,
                label_w - 4.0,
                y + ch * 0.75,
                if ch < 10.0 { 7 } else { 10 },
                escape(&m.row_labels[r])
            );
        }
        for (c, &v) in row.iter().enumerate() {
            let x = label_w + cw * c as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cw:.1}" height="{ch:.1}" fill="{}"><title>{}, {}: {v:.6}</title></rect>"#,
                ramp_color(color_level(v, max_abs, scale)),
                escape(&m.row_labels[r]),
                escape(&m.col_labels[c])
            );
        }
    }
    // legend: ten steps from 0 to max |value|
    let steps = 10;
    let step_h = grid_h.min(200.0) / steps as f64;
    for i in 0..steps {
        let level = 1.0 - i as f64 / (steps - 1) as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{legend_x:.1}" y="{:.1}" width="16" height="{step_h:.1}" fill="{}"/>"#,
            top + step_h * i as f64,
            ramp_color(level)
        );
    }
    let scale_name = match scale {
        ColorScale::Linear => "linear",
        ColorScale::Log1p => "log1p",
    };
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="10">{max_abs:.4}</text>"#, legend_x + 20.0, top + 8.0);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="10">0</text>"#,
        legend_x + 20.0,
        top + step_h * steps as f64
    );
    let _ = writeln!(
        s,
        r#"<text x="{legend_x:.1}" y="{:.1}" font-size="9">|value|, {scale_name}</text>"#,
        top - 6.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// Distinct fill colours used by a rendered SVG, for tests.
pub fn svg_fills(svg: &str) -> BTreeSet<String> {
    svg.split("fill=\"")
        .skip(1)
        .filter_map(|rest| rest.split('"').next())
        .map(str::to_string)
        .collect()
}
