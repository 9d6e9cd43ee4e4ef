//! Sliding-window samples, chronological splits and batching.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::HazardCounts;
use crate::ingest::CountyDayTable;
use crate::ndgrad::Array;

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `L × F`, oldest row first.
    pub inputs: Array,
    /// Counts over the forward window following `anchor_date`.
    pub target: HazardCounts,
    pub anchor_date: NaiveDate,
    pub dates: Vec<NaiveDate>,
    /// Table row of the first input row.
    pub start_row: usize,
}

impl WindowSample {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

/// `floor((labeled − L) / stride) + 1`, or `None` when `labeled < L`.
pub fn window_count(labeled: usize, lookback: usize, stride: usize) -> Option<usize> {
    (lookback >= 1 && stride >= 1 && labeled >= lookback).then(|| (labeled - lookback) / stride + 1)
}

/// Window `k` covers rows `[k·stride, k·stride + L)`; only windows whose last
/// row carries a target are produced.
pub fn make_windows(table: &CountyDayTable, lookback: usize, stride: usize) -> Result<Vec<WindowSample>> {
    if lookback == 0 || stride == 0 {
        return Err(Error::Config("lookback and stride must be at least 1".into()));
    }
    let labeled = table.labeled_len();
    let forward = table.forward_window.unwrap_or(table.len() - labeled);
    let count = window_count(labeled, lookback, stride).ok_or_else(|| {
        Error::Data(format!(
            "table has {} rows ({labeled} labeled); windows of length {lookback} with a \
             {forward}-day forward window need at least {} rows",
            table.len(),
            lookback + forward
        ))
    })?;
    let f = table.num_features();
    (0..count)
        .map(|k| {
            let start = k * stride;
            let end = start + lookback;
            let mut data = Vec::with_capacity(lookback * f);
            for row in &table.features[start..end] {
                data.extend_from_slice(row);
            }
            let target = table.targets[end - 1].expect("labeled anchor");
            Ok(WindowSample {
                inputs: Array::from_vec(lookback, f, data)?,
                target,
                anchor_date: table.dates[end - 1],
                dates: table.dates[start..end].to_vec(),
                start_row: start,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.7,
            val_frac: 0.15,
            test_frac: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|&f| !(f > 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be positive and sum to 1, got {fr:?}"
            )));
        }
        Ok(())
    }

    /// `floor(frac · n)` for validation and test; the remainder goes to
    /// training.
    pub fn sizes(&self, n: usize) -> Result<SplitSizes> {
        self.validate()?;
        let val = (self.val_frac * n as f64).floor() as usize;
        let test = (self.test_frac * n as f64).floor() as usize;
        let train = n.saturating_sub(val + test);
        if train == 0 || val == 0 || test == 0 {
            return Err(Error::Data(format!(
                "{n} samples split {train}/{val}/{test} leaves an empty partition"
            )));
        }
        Ok(SplitSizes { train, val, test })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

/// Contiguous prefix / middle / suffix by anchor date.
pub fn chrono_split(samples: Vec<WindowSample>, spec: &SplitSpec) -> Result<Splits> {
    if samples.windows(2).any(|w| w[0].anchor_date > w[1].anchor_date) {
        return Err(Error::Data("samples must be sorted by anchor date".into()));
    }
    let sizes = spec.sizes(samples.len())?;
    let mut rest = samples;
    let test = rest.split_off(sizes.train + sizes.val);
    let val = rest.split_off(sizes.train);
    Ok(Splits {
        train: rest,
        val,
        test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// Keep sample order.
    Eval,
    /// Seeded shuffle before batching.
    Train { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Vec<Array>,
    pub targets: Vec<HazardCounts>,
    /// Positions of the batch members in the source slice.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

pub fn shuffled_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Groups samples into batches of `size`; the last batch may be smaller.
pub fn batch(samples: &[WindowSample], size: usize, mode: BatchMode) -> Result<Vec<Batch>> {
    if size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let order = match mode {
        BatchMode::Eval => (0..samples.len()).collect(),
        BatchMode::Train { seed } => shuffled_order(samples.len(), seed),
    };
    Ok(order
        .chunks(size)
        .map(|idx| Batch {
            inputs: idx.iter().map(|&i| samples[i].inputs.clone()).collect(),
            targets: idx.iter().map(|&i| samples[i].target).collect(),
            indices: idx.to_vec(),
        })
        .collect())
}
