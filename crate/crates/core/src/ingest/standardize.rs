use std::ops::RangeInclusive;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::table::CountyDayTable;
use crate::error::{Error, Result};

/// Features whose fitted standard deviation falls below this are constant.
pub const CONSTANT_STD: f64 = 1e-12;

/// Per-feature population z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub constant: Vec<bool>,
    pub fit_start: NaiveDate,
    pub fit_end: NaiveDate,
}

impl Standardizer {
    /// Fits on the rows of `table` whose date lies in `range` only.
    pub fn fit(table: &CountyDayTable, range: RangeInclusive<NaiveDate>) -> Result<Self> {
        let rows: Vec<&Vec<f64>> = table
            .dates
            .iter()
            .zip(&table.features)
            .filter(|(d, _)| range.contains(d))
            .map(|(_, row)| row)
            .collect();
        if rows.is_empty() {
            return Err(Error::Data(format!(
                "no rows between {} and {} to fit the standardizer on",
                range.start(),
                range.end()
            )));
        }
        let n = rows.len() as f64;
        let f = table.num_features();
        let mut means = vec![0.0; f];
        for row in &rows {
            for (m, x) in means.iter_mut().zip(row.iter()) {
                *m += x;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut stds = vec![0.0; f];
        for row in &rows {
            for ((s, x), m) in stds.iter_mut().zip(row.iter()).zip(&means) {
                *s += (x - m) * (x - m);
            }
        }
        stds.iter_mut().for_each(|s| *s = (*s / n).sqrt());
        let constant = stds.iter().map(|&s| s < CONSTANT_STD).collect();
        Ok(Standardizer {
            means,
            stds,
            constant,
            fit_start: *range.start(),
            fit_end: *range.end(),
        })
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(i, &x)| {
                if self.constant[i] {
                    0.0
                } else {
                    (x - self.means[i]) / self.stds[i]
                }
            })
            .collect()
    }

    /// Undoes [`Standardizer::transform_row`]. Constant features come back as
    /// their fitted mean.
    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(i, &z)| {
                if self.constant[i] {
                    self.means[i]
                } else {
                    z * self.stds[i] + self.means[i]
                }
            })
            .collect()
    }
}

/// Fits a standardizer on `range` and stores it on the table.
pub fn fit_standardizer(table: &mut CountyDayTable, range: RangeInclusive<NaiveDate>) -> Result<()> {
    table.standardizer = Some(Standardizer::fit(table, range)?);
    Ok(())
}

/// Returns a copy of `table` with z-scored features.
pub fn apply_standardizer(table: &CountyDayTable) -> Result<CountyDayTable> {
    let st = table
        .standardizer
        .as_ref()
        .ok_or_else(|| Error::Data("standardizer applied before it was fitted".into()))?;
    if table.standardized {
        return Err(Error::Data("table features are already standardized".into()));
    }
    let mut out = table.clone();
    out.features = table.features.iter().map(|r| st.transform_row(r)).collect();
    out.standardized = true;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::table::tests::table_from_column;
    use approx::assert_relative_eq;

    fn full_range(t: &CountyDayTable) -> RangeInclusive<NaiveDate> {
        t.dates[0]..=*t.dates.last().unwrap()
    }

    #[test]
    fn population_z_score() {
        let mut t = table_from_column(&[1.0, 2.0, 3.0]);
        let range = full_range(&t);
        fit_standardizer(&mut t, range).unwrap();
        let st = t.standardizer.as_ref().unwrap();
        assert_relative_eq!(st.means[0], 2.0);
        assert_relative_eq!(st.stds[0], (2.0f64 / 3.0).sqrt());
        let z = apply_standardizer(&t).unwrap();
        let col: Vec<f64> = z.features.iter().map(|r| r[0]).collect();
        assert_relative_eq!(col[0], -1.224744871391589, epsilon = 1e-12);
        assert_eq!(col[1], 0.0);
        assert_relative_eq!(col[2], 1.224744871391589, epsilon = 1e-12);
    }

    #[test]
    fn constant_column_flagged() {
        let mut t = table_from_column(&[5.0, 5.0, 5.0]);
        let range = full_range(&t);
        fit_standardizer(&mut t, range).unwrap();
        assert!(t.standardizer.as_ref().unwrap().constant[0]);
        let z = apply_standardizer(&t).unwrap();
        assert!(z.features.iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn fit_only_sees_training_range() {
        let mut t = table_from_column(&[1.0, 2.0, 9.0]);
        let range = t.dates[0]..=t.dates[1];
        fit_standardizer(&mut t, range).unwrap();
        let st = t.standardizer.as_ref().unwrap();
        assert_eq!(st.means[0], 1.5);
        assert_eq!(st.stds[0], 0.5);
        let z = apply_standardizer(&t).unwrap();
        assert_eq!(z.features[2][0], 15.0);
    }

    #[test]
    fn apply_before_fit_fails() {
        let t = table_from_column(&[1.0, 2.0]);
        assert!(apply_standardizer(&t).is_err());
    }

    #[test]
    fn double_application_rejected() {
        let mut t = table_from_column(&[1.0, 2.0, 4.0]);
        let range = full_range(&t);
        fit_standardizer(&mut t, range).unwrap();
        let z = apply_standardizer(&t).unwrap();
        assert!(apply_standardizer(&z).is_err());
    }
}
