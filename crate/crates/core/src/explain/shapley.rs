//! Shapley values of cooperative games, exactly or by KernelSHAP regression.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Player count above which exact enumeration is refused.
pub const MAX_EXACT_PLAYERS: usize = 12;

/// A game whose coalitions are evaluated in batches.
pub trait CoalitionGame {
    fn players(&self) -> usize;
    /// `v(S)` for each coalition, given as membership masks.
    fn values(&self, coalitions: &[Vec<bool>]) -> Result<Vec<f64>>;
}

/// Wraps a closure over membership masks.
pub struct FnGame<F> {
    pub players: usize,
    pub value: F,
}

impl<F: Fn(&[bool]) -> f64> CoalitionGame for FnGame<F> {
    fn players(&self) -> usize {
        self.players
    }

    fn values(&self, coalitions: &[Vec<bool>]) -> Result<Vec<f64>> {
        Ok(coalitions.iter().map(|c| (self.value)(c)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ShapleyMode {
    Exact,
    Kernel { nsamples: usize, seed: u64 },
}

impl ShapleyMode {
    /// Exact when `players ≤ MAX_EXACT_PLAYERS`, otherwise kernel.
    pub fn auto(players: usize, nsamples: usize, seed: u64) -> Self {
        if players <= MAX_EXACT_PLAYERS {
            ShapleyMode::Exact
        } else {
            ShapleyMode::Kernel { nsamples, seed }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyValues {
    pub phi: Vec<f64>,
    /// `v(∅)`.
    pub empty_value: f64,
    /// `v(all players)`.
    pub full_value: f64,
    pub mode: ShapleyMode,
    /// Distinct coalitions evaluated, including the empty and full ones.
    pub evaluations: usize,
}

impl ShapleyValues {
    /// `Σφ − (v(all) − v(∅))`.
    pub fn efficiency_gap(&self) -> f64 {
        self.phi.iter().sum::<f64>() - (self.full_value - self.empty_value)
    }
}

pub fn shapley<G: CoalitionGame + ?Sized>(game: &G, mode: ShapleyMode) -> Result<ShapleyValues> {
    match mode {
        ShapleyMode::Exact => exact(game),
        ShapleyMode::Kernel { nsamples, seed } => kernel(game, nsamples, seed),
    }
}

fn mask_of(bits: u64, m: usize) -> Vec<bool> {
    (0..m).map(|i| bits >> i & 1 == 1).collect()
}

fn exact<G: CoalitionGame + ?Sized>(game: &G) -> Result<ShapleyValues> {
    let m = game.players();
    if m > MAX_EXACT_PLAYERS {
        return Err(Error::Config(format!(
            "exact Shapley enumeration supports at most {MAX_EXACT_PLAYERS} players, got {m}"
        )));
    }
    let n = 1usize << m;
    let masks: Vec<Vec<bool>> = (0..n as u64).map(|b| mask_of(b, m)).collect();
    let v = game.values(&masks)?;
    // |S|!(M−|S|−1)!/M! for each coalition size
    let fact: Vec<f64> = (0..=m).scan(1.0, |acc, k| {
        if k > 0 {
            *acc *= k as f64;
        }
        Some(*acc)
    }).collect();
    let weight: Vec<f64> = (0..m).map(|s| fact[s] * fact[m - s - 1] / fact[m]).collect();
    let mut phi = vec![0.0; m];
    for s in 0..n {
        let size = (s as u64).count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if s >> i & 1 == 0 {
                *p += weight[size] * (v[s | 1 << i] - v[s]);
            }
        }
    }
    Ok(ShapleyValues {
        phi,
        empty_value: v[0],
        full_value: v[n - 1],
        mode: ShapleyMode::Exact,
        evaluations: n,
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Proper, non-empty coalitions and their regression weights.
fn kernel_coalitions(m: usize, nsamples: usize, seed: u64) -> Vec<(Vec<bool>, f64)> {
    let enumerable = m < 31 && nsamples >= (1usize << m) - 2;
    if enumerable {
        return (1..(1u64 << m) - 1)
            .map(|b| {
                let s = b.count_ones() as usize;
                let w = (m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64);
                (mask_of(b, m), w)
            })
            .collect();
    }
    // Sample sizes from the kernel's size marginal, subsets uniformly within a
    // size, and add each complement; every draw then carries unit weight.
    let size_w: Vec<f64> = (1..m).map(|s| (m - 1) as f64 / (s * (m - s)) as f64).collect();
    let total: f64 = size_w.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts: HashMap<Vec<bool>, f64> = HashMap::new();
    let mut order: Vec<Vec<bool>> = Vec::new();
    let mut add = |mask: Vec<bool>, counts: &mut HashMap<Vec<bool>, f64>| {
        let entry = counts.entry(mask.clone()).or_insert_with(|| {
            order.push(mask);
            0.0
        });
        *entry += 1.0;
    };
    let mut drawn = 0;
    while drawn < nsamples {
        let mut u = rng.gen::<f64>() * total;
        let mut size = m - 1;
        for (i, w) in size_w.iter().enumerate() {
            if u < *w {
                size = i + 1;
                break;
            }
            u -= w;
        }
        let mut mask = vec![false; m];
        for i in sample(&mut rng, m, size).into_iter() {
            mask[i] = true;
        }
        let complement: Vec<bool> = mask.iter().map(|b| !b).collect();
        add(mask, &mut counts);
        add(complement, &mut counts);
        drawn += 2;
    }
    order
        .into_iter()
        .map(|mask| {
            let w = counts[&mask];
            (mask, w)
        })
        .collect()
}

fn kernel<G: CoalitionGame + ?Sized>(game: &G, nsamples: usize, seed: u64) -> Result<ShapleyValues> {
    let m = game.players();
    if nsamples < m + 2 {
        return Err(Error::Config(format!(
            "kernel Shapley needs at least {} samples for {m} players, got {nsamples}",
            m + 2
        )));
    }
    let mode = ShapleyMode::Kernel { nsamples, seed };
    let ends = game.values(&[vec![false; m], vec![true; m]])?;
    let (empty_value, full_value) = (ends[0], ends[1]);
    let delta = full_value - empty_value;
    if m <= 1 {
        return Ok(ShapleyValues {
            phi: vec![delta; m],
            empty_value,
            full_value,
            mode,
            evaluations: 2,
        });
    }

    let coalitions = kernel_coalitions(m, nsamples, seed);
    let masks: Vec<Vec<bool>> = coalitions.iter().map(|(c, _)| c.clone()).collect();
    let values = game.values(&masks)?;

    // Efficiency is imposed by eliminating the last player:
    // φ_last = Δ − Σ_{i<last} φ_i, leaving an unconstrained weighted least
    // squares problem in the first m − 1 coefficients.
    let k = m - 1;
    let mut normal = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    let mut z = vec![0.0; k];
    for ((mask, w), v) in coalitions.iter().zip(&values) {
        let last = if mask[k] { 1.0 } else { 0.0 };
        for i in 0..k {
            z[i] = if mask[i] { 1.0 } else { 0.0 } - last;
        }
        let y = v - empty_value - last * delta;
        for i in 0..k {
            if z[i] == 0.0 {
                continue;
            }
            rhs[i] += w * z[i] * y;
            for j in 0..k {
                normal[(i, j)] += w * z[i] * z[j];
            }
        }
    }
    let head = match normal.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => normal
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Numerical(format!("kernel Shapley regression failed: {e}")))?,
    };
    let mut phi: Vec<f64> = head.iter().copied().collect();
    let rest = delta - phi.iter().sum::<f64>();
    phi.push(rest);
    Ok(ShapleyValues {
        phi,
        empty_value,
        full_value,
        mode,
        evaluations: coalitions.len() + 2,
    })
}
