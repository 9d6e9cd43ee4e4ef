//! Poisson count loss, AdamW, the training loop and evaluation metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::{Hazard, HazardCounts, NUM_HAZARDS};
use crate::models::{Model, ModelConfig, ParamStore};
use crate::ndgrad::{Array, Graph, Var};
use crate::window::{batch, BatchMode, Splits, WindowSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub include_stirling: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            include_stirling: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eps", self.eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("beta1 and beta2 must be below 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size, max_epochs and patience must be at least 1".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// `ln(n!)`.
pub fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// `Σ_h exp(η_h) − y_h η_h`, plus `Σ ln(y_h!)` when `include_stirling`.
pub fn poisson_nll(log_rates: &[f64; NUM_HAZARDS], targets: &HazardCounts, include_stirling: bool) -> f64 {
    log_rates
        .iter()
        .zip(targets)
        .map(|(&eta, &y)| {
            let base = eta.exp() - y as f64 * eta;
            if include_stirling {
                base + ln_factorial(y)
            } else {
                base
            }
        })
        .sum()
}

/// Per-sample minimum of [`poisson_nll`], reached at `η = ln y`
/// (`η → −∞` for `y = 0`).
pub fn poisson_nll_minimum(targets: &HazardCounts, include_stirling: bool) -> f64 {
    targets
        .iter()
        .map(|&y| {
            let y_f = y as f64;
            let base = if y == 0 { 0.0 } else { y_f - y_f * y_f.ln() };
            if include_stirling {
                base + ln_factorial(y)
            } else {
                base
            }
        })
        .sum()
}

/// Batch-mean Poisson NLL on the graph; `log_rates` is `B × 6`.
pub fn poisson_nll_graph(g: &mut Graph, log_rates: Var, targets: &[HazardCounts], include_stirling: bool) -> Result<Var> {
    let [b, h] = g.shape(log_rates);
    if b != targets.len() || h != NUM_HAZARDS {
        return Err(Error::shape("poisson_nll", &[b, h], &[targets.len(), NUM_HAZARDS]));
    }
    let y = Array::from_vec(
        b,
        NUM_HAZARDS,
        targets.iter().flat_map(|t| t.iter().map(|&c| c as f64)).collect(),
    )?;
    let y = g.constant(y);
    let rates = g.exp(log_rates);
    let linear = g.mul(y, log_rates)?;
    let terms = g.sub(rates, linear)?;
    let total = g.sum_all(terms);
    let mut loss = g.scale(total, 1.0 / b as f64);
    if include_stirling {
        let offset: f64 = targets.iter().flat_map(|t| t.iter()).map(|&c| ln_factorial(c)).sum();
        loss = g.shift(loss, offset / b as f64);
    }
    Ok(loss)
}

/// Adam moments mirroring the parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Array>,
    pub v: Vec<Array>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Array::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        OptimizerState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One decoupled-decay Adam update. Decay applies only to parameters flagged
/// for it and uses the pre-update value.
pub fn adamw_step(params: &mut ParamStore, grads: &[Array], state: &mut OptimizerState, cfg: &TrainConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Config(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = &grads[i];
        if g.shape() != p.value.shape() {
            return Err(Error::shape("adamw_step", &p.value.shape(), &g.shape()));
        }
        let decay = if p.decay { cfg.weight_decay } else { 0.0 };
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, theta) in p.value.data_mut().iter_mut().enumerate() {
            let gk = g.data()[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *theta -= cfg.learning_rate * (m_hat / (v_hat.sqrt() + cfg.eps) + decay * *theta);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Loss and gradients of one batch, in parameter-store order.
pub fn batch_gradients(model: &Model, inputs: &[Array], targets: &[HazardCounts], include_stirling: bool) -> Result<(f64, Vec<Array>)> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let pass = model.forward(&mut g, &p, inputs)?;
    let loss = poisson_nll_graph(&mut g, pass.log_rates, targets, include_stirling)?;
    let value = g.value(loss).item();
    g.backward(loss)?;
    Ok((value, p.vars.iter().map(|&v| g.grad(v)).collect()))
}

/// Mean per-sample loss over `samples` with the current parameters.
pub fn mean_loss(model: &Model, samples: &[WindowSample], include_stirling: bool) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to score".into()));
    }
    let inputs: Vec<Array> = samples.iter().map(|s| s.inputs.clone()).collect();
    let outputs = model.predict(&inputs)?;
    let total: f64 = outputs
        .iter()
        .zip(samples)
        .map(|(o, s)| poisson_nll(&o.log_rates, &s.target, include_stirling))
        .sum();
    Ok(total / samples.len() as f64)
}

pub fn train(model_config: &ModelConfig, cfg: &TrainConfig, splits: &Splits) -> Result<TrainOutcome> {
    train_model(Model::new(model_config.clone())?, cfg, &splits.train, &splits.val, |_| {})
}

/// Trains from the given initial parameters. `on_epoch` sees each finished
/// epoch.
pub fn train_model(
    mut model: Model,
    cfg: &TrainConfig,
    train: &[WindowSample],
    val: &[WindowSample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training needs non-empty train and validation splits".into()));
    }
    let mut state = OptimizerState::new(&model.params);
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut waited = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let batches = batch(train, cfg.batch_size, BatchMode::Train { seed: cfg.seed.wrapping_add(epoch as u64) })?;
        let mut loss_sum = 0.0;
        for b in &batches {
            let (loss, grads) = batch_gradients(&model, &b.inputs, &b.targets, cfg.include_stirling)?;
            if !loss.is_finite() {
                return Err(diverged(&history, epoch));
            }
            loss_sum += loss * b.len() as f64;
            adamw_step(&mut model.params, &grads, &mut state, cfg)?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = mean_loss(&model, val, cfg.include_stirling).map_err(|e| match e {
            Error::Numerical(_) => diverged(&history, epoch),
            other => other,
        })?;
        if !val_loss.is_finite() {
            return Err(diverged(&history, epoch));
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        on_epoch(&record);
        history.push(record);

        if val_loss < best.0 {
            best = (val_loss, epoch, model.params.clone());
            waited = 0;
        } else {
            waited += 1;
            if waited >= cfg.patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    let (best_val_loss, best_epoch, params) = best;
    model.params = params;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_loss,
        stopped_early,
    })
}

fn diverged(history: &[EpochRecord], epoch: usize) -> Error {
    match history.last() {
        Some(last) => Error::Numerical(format!(
            "loss diverged in epoch {epoch}; last finite epoch {} (train {:.6}, val {:.6})",
            last.epoch, last.train_loss, last.val_loss
        )),
        None => Error::Numerical(format!("loss diverged in epoch {epoch}; no finite epoch")),
    }
}

pub fn write_history<W: Write>(history: &[EpochRecord], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for r in history {
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardMetric {
    pub hazard: Hazard,
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_hazard: Vec<HazardMetric>,
    /// Means of the per-hazard values.
    pub mae: f64,
    pub rmse: f64,
    pub samples: usize,
}

/// Per-hazard MAE and RMSE of raw rates against counts, then averaged over
/// hazards.
pub fn metrics_from_rates(rates: &[[f64; NUM_HAZARDS]], targets: &[HazardCounts]) -> Result<Metrics> {
    if rates.is_empty() || rates.len() != targets.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} targets",
            rates.len(),
            targets.len()
        )));
    }
    let n = rates.len() as f64;
    let per_hazard: Vec<HazardMetric> = Hazard::ALL
        .iter()
        .map(|&hazard| {
            let h = hazard.index();
            let (abs, sq) = rates.iter().zip(targets).fold((0.0, 0.0), |(a, s), (r, t)| {
                let e = r[h] - t[h] as f64;
                (a + e.abs(), s + e * e)
            });
            HazardMetric {
                hazard,
                mae: abs / n,
                rmse: (sq / n).sqrt(),
            }
        })
        .collect();
    let mae = per_hazard.iter().map(|m| m.mae).sum::<f64>() / NUM_HAZARDS as f64;
    let rmse = per_hazard.iter().map(|m| m.rmse).sum::<f64>() / NUM_HAZARDS as f64;
    Ok(Metrics {
        per_hazard,
        mae,
        rmse,
        samples: rates.len(),
    })
}

pub fn evaluate(model: &Model, samples: &[WindowSample]) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    let inputs: Vec<Array> = samples.iter().map(|s| s.inputs.clone()).collect();
    let rates = model.rates(&inputs)?;
    let targets: Vec<HazardCounts> = samples.iter().map(|s| s.target).collect();
    metrics_from_rates(&rates, &targets)
}

pub fn write_metrics<W: Write>(metrics: &Metrics, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["hazard", "MAE", "RMSE"])?;
    for m in &metrics.per_hazard {
        w.write_record([m.hazard.name().to_string(), m.mae.to_string(), m.rmse.to_string()])?;
    }
    w.write_record(["average".to_string(), metrics.mae.to_string(), metrics.rmse.to_string()])?;
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_metrics`].
pub fn read_metrics<R: std::io::Read>(source: R) -> Result<Metrics> {
    let mut r = csv::Reader::from_reader(source);
    let mut per_hazard = Vec::new();
    let mut average = None;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Row {
                    line,
                    message: format!("bad number in column {}", k + 1),
                })
        };
        let name = rec.get(0).unwrap_or("").trim();
        if name.eq_ignore_ascii_case("average") {
            average = Some((num(1)?, num(2)?));
        } else {
            let hazard: Hazard = name.parse().map_err(|_| Error::Row {
                line,
                message: format!("unknown hazard {name:?}"),
            })?;
            per_hazard.push(HazardMetric {
                hazard,
                mae: num(1)?,
                rmse: num(2)?,
            });
        }
    }
    let (mae, rmse) = average.ok_or_else(|| Error::Data("metrics file has no average row".into()))?;
    Ok(Metrics {
        per_hazard,
        mae,
        rmse,
        samples: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn nll_examples() {
        assert_eq!(poisson_nll(&[0.0; 6], &[0; 6], false), 6.0);
        let mut eta = [0.0; 6];
        eta[2] = 2f64.ln();
        let mut y = [0; 6];
        y[2] = 2;
        let v = poisson_nll(&eta, &y, false);
        assert_relative_eq!(v, 2.0 - 2.0 * 2f64.ln() + 5.0, epsilon = 1e-12);
        assert_eq!((v * 1e4).round() / 1e4, 5.6137);
        assert_relative_eq!(poisson_nll(&eta, &y, true), v + 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn graph_loss_matches_scalar_and_gradient() {
        let eta_rows = [[0.3, -1.0, 0.0, 2.0, -0.5, 1.1], [0.0, 0.2, -0.7, 0.4, 0.9, -2.0]];
        let ys: [HazardCounts; 2] = [[1, 0, 2, 5, 0, 3], [0, 0, 1, 0, 4, 0]];
        let mut g = Graph::new();
        let eta = g.variable(Array::from_rows(&eta_rows).unwrap());
        let loss = poisson_nll_graph(&mut g, eta, &ys, true).unwrap();
        let expect = (poisson_nll(&eta_rows[0], &ys[0], true) + poisson_nll(&eta_rows[1], &ys[1], true)) / 2.0;
        assert_relative_eq!(g.value(loss).item(), expect, epsilon = 1e-12);
        g.backward(loss).unwrap();
        let grad = g.grad(eta);
        for b in 0..2 {
            for h in 0..6 {
                let analytic = (eta_rows[b][h].exp() - ys[b][h] as f64) / 2.0;
                assert!((grad.get(b, h) - analytic).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn adamw_single_step() {
        let mut store = ParamStore::default();
        store.insert("w", Array::scalar(1.0), true);
        let mut state = OptimizerState::new(&store);
        adamw_step(&mut store, &[Array::scalar(1.0)], &mut state, &TrainConfig::default()).unwrap();
        let expect = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8)) - 1e-5;
        assert_relative_eq!(store.get("w").unwrap().value.item(), expect, epsilon = 1e-15);
        assert_eq!((expect * 1e6).round() / 1e6, 0.998990);
    }

    #[test]
    fn decay_is_pure_shrink_without_gradient() {
        let mut store = ParamStore::default();
        store.insert("w", Array::scalar(2.0), true);
        store.insert("b", Array::scalar(2.0), false);
        let mut state = OptimizerState::new(&store);
        let cfg = TrainConfig::default();
        let zero = [Array::scalar(0.0), Array::scalar(0.0)];
        adamw_step(&mut store, &zero, &mut state, &cfg).unwrap();
        assert_relative_eq!(store.get("w").unwrap().value.item(), 2.0 * (1.0 - 1e-5), epsilon = 1e-15);
        assert_eq!(store.get("b").unwrap().value.item(), 2.0);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..cfg
        };
        adamw_step(&mut store, &zero, &mut state, &cfg).unwrap();
        assert_relative_eq!(store.get("w").unwrap().value.item(), 2.0 * (1.0 - 1e-5), epsilon = 1e-15);
    }

    #[test]
    fn metric_examples() {
        let mut r = [[0.0; 6]; 2];
        r[0][0] = 1.0;
        r[1][0] = 2.0;
        let mut y = [[0; 6]; 2];
        y[0][0] = 1;
        y[1][0] = 4;
        let m = metrics_from_rates(&r, &y).unwrap();
        assert_eq!(m.per_hazard[0].mae, 1.0);
        assert_relative_eq!(m.per_hazard[0].rmse, 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(m.per_hazard[1].mae, 0.0);
        let perfect = metrics_from_rates(&[[2.0; 6]], &[[2; 6]]).unwrap();
        assert_eq!((perfect.mae, perfect.rmse), (0.0, 0.0));
    }

    #[test]
    fn metrics_csv_round_trip() {
        let m = metrics_from_rates(&[[0.5, 1.0, 0.0, 2.0, 0.1, 0.3]], &[[1, 0, 0, 2, 0, 1]]).unwrap();
        let mut buf = Vec::new();
        write_metrics(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("hazard,MAE,RMSE\n"));
        assert!(text.lines().last().unwrap().starts_with("average,"));
        let back = read_metrics(buf.as_slice()).unwrap();
        assert_eq!(back.per_hazard, m.per_hazard);
        assert_eq!((back.mae, back.rmse), (m.mae, m.rmse));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience: 200,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
