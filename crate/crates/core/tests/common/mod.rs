#![allow(dead_code)]

use chrono::{Days, NaiveDate};
use hazardcast::ingest::{apply_standardizer, build_targets, fit_standardizer, CountyDayTable, HazardEvent};
use hazardcast::models::{Architecture, Model, ModelConfig, TransformerConfig};
use hazardcast::ndgrad::{Array, Graph, Var};
use hazardcast::training::{batch_gradients, poisson_nll_graph};
use hazardcast::window::{chrono_split, make_windows, window_count, SplitSpec};
use hazardcast::{Hazard, HazardCounts, Result, NUM_HAZARDS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Gradient agreement threshold.
pub const GRAD_TOL: f64 = 1e-5;
/// Denominator floor for the relative error, so components whose true value
/// is ~0 are judged on absolute round-off instead of a 0/0 ratio.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn random_array(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Array::from_vec(rows, cols, data).unwrap()
}

fn eval(inputs: &[Array], build: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|a| g.variable(a.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    g.value(out).item()
}

/// Analytic gradients of a scalar graph wrt every input.
pub fn analytic_grads(inputs: &[Array], build: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>) -> Vec<Array> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|a| g.variable(a.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    g.backward(out).unwrap();
    vars.iter().map(|&v| g.grad(v)).collect()
}

/// Worst relative error between backprop and central differences over every
/// input entry.
pub fn max_graph_error(inputs: &[Array], build: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let grads = analytic_grads(inputs, build);
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (i, grad) in grads.iter().enumerate() {
        for k in 0..inputs[i].len() {
            let x = inputs[i].data()[k];
            work[i].data_mut()[k] = x + FD_STEP;
            let up = eval(&work, build);
            work[i].data_mut()[k] = x - FD_STEP;
            let down = eval(&work, build);
            work[i].data_mut()[k] = x;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grad.data()[k], numeric));
        }
    }
    worst
}

pub fn small_config(arch: Architecture, features: usize) -> ModelConfig {
    let mut c = ModelConfig::new(arch, features);
    c.hidden_size = 3;
    c.attention_size = 3;
    c.transformer = TransformerConfig {
        d_model: 4,
        heads: 2,
        layers: 2,
        ffn_size: 5,
        positional_encoding: true,
    };
    c.seed = 21;
    c
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Array>, Vec<HazardCounts>) {
    let windows = (0..n).map(|_| random_array(rng, 8, 4, 1.5)).collect();
    let targets = (0..n)
        .map(|_| {
            let mut t = [0u32; 6];
            t.iter_mut().for_each(|x| *x = rng.gen_range(0..3));
            t
        })
        .collect();
    (windows, targets)
}

pub fn loss_of(model: &Model, windows: &[Array], targets: &[HazardCounts]) -> f64 {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, false);
    let pass = model.forward(&mut g, &p, windows).unwrap();
    let loss = poisson_nll_graph(&mut g, pass.log_rates, targets, false).unwrap();
    g.value(loss).item()
}

/// Worst relative error of the Poisson loss gradient over every parameter
/// of a small model on two random 8×4 windows.
pub fn parameter_gradient_error(arch: Architecture) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut model = Model::new(small_config(arch, 4)).unwrap();
    let (windows, targets) = random_batch(&mut rng, 2);
    let (_, grads) = batch_gradients(&model, &windows, &targets, false).unwrap();
    let names: Vec<String> = model.params.iter().map(|p| p.name.clone()).collect();
    let mut worst: f64 = 0.0;
    for (name, grad) in names.iter().zip(&grads) {
        for k in 0..grad.len() {
            let orig = model.params.get(name).unwrap().value.data()[k];
            model.params.get_mut(name).unwrap().value.data_mut()[k] = orig + FD_STEP;
            let up = loss_of(&model, &windows, &targets);
            model.params.get_mut(name).unwrap().value.data_mut()[k] = orig - FD_STEP;
            let down = loss_of(&model, &windows, &targets);
            model.params.get_mut(name).unwrap().value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = rel_err(grad.data()[k], numeric);
            worst = worst.max(err);
        }
    }
    worst
}

/// Table of `days` random feature rows starting 2010-01-01, targets unset.
pub fn random_table(rng: &mut ChaCha8Rng, days: usize, features: usize) -> CountyDayTable {
    let start = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
    CountyDayTable {
        county: "TEST".into(),
        dates: (0..days).map(|i| start + Days::new(i as u64)).collect(),
        feature_names: (0..features).map(|i| format!("F{i}")).collect(),
        features: (0..days)
            .map(|_| (0..features).map(|_| rng.gen_range(-50.0..50.0)).collect())
            .collect(),
        targets: vec![None; days],
        forward_window: None,
        standardizer: None,
        standardized: false,
    }
}

/// Builds targets for random events and compares every label with a direct
/// count over the forward window.
pub fn label_sum_trial(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    let days = rng.gen_range(20..80);
    let window = rng.gen_range(1..16);
    let mut table = random_table(rng, days, 1);
    let start = table.dates[0];
    let events: Vec<HazardEvent> = (0..rng.gen_range(0..12))
        .map(|_| {
            let b = start + Days::new(rng.gen_range(0..days as u64 + 10)) - Days::new(5);
            HazardEvent {
                begin_date: b,
                end_date: b + Days::new(rng.gen_range(0..5)),
                raw_type: String::new(),
                hazard: Hazard::ALL[rng.gen_range(0..NUM_HAZARDS)],
                county: "TEST".into(),
                property_damage_usd: 1e6,
                crop_damage_usd: 0.0,
                injuries: 0,
                deaths: 0,
            }
        })
        .collect();
    build_targets(&mut table, &events, window).map_err(|e| e.to_string())?;
    for d in 0..days {
        let expected = (d + window < days).then(|| {
            let mut t = [0u32; NUM_HAZARDS];
            for (h, slot) in t.iter_mut().enumerate() {
                *slot = (d + 1..=d + window)
                    .filter(|&j| {
                        events
                            .iter()
                            .any(|e| e.hazard.index() == h && e.begin_date <= table.dates[j] && table.dates[j] <= e.end_date)
                    })
                    .count() as u32;
            }
            t
        });
        if table.targets[d] != expected {
            return Err(format!("day {d}, window {window}: {:?} vs {expected:?}", table.targets[d]));
        }
    }
    Ok(())
}

/// Largest |x − inverse(transform(x))| over a random table.
pub fn standardizer_round_trip_error(rng: &mut ChaCha8Rng) -> f64 {
    let days = rng.gen_range(5..60);
    let features = rng.gen_range(1..5);
    let mut table = random_table(rng, days, features);
    if rng.gen_bool(0.3) {
        table.features.iter_mut().for_each(|r| r[0] = 7.25);
    }
    let fit_end = rng.gen_range(1..days);
    let range = table.dates[0]..=table.dates[fit_end];
    fit_standardizer(&mut table, range).unwrap();
    let st = table.standardizer.clone().unwrap();
    let z = apply_standardizer(&table).unwrap();
    table
        .features
        .iter()
        .zip(&z.features)
        .flat_map(|(x, zr)| {
            let back = st.inverse_row(zr);
            x.iter().zip(back).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

/// Windows of a labeled table: count matches the closed form and a direct
/// enumeration, and each window reads the rows it claims.
pub fn window_count_trial(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    let days = rng.gen_range(2..120);
    let window = rng.gen_range(1..days.min(20));
    let lookback = rng.gen_range(1..40);
    let stride = rng.gen_range(1..6);
    let mut table = random_table(rng, days, 2);
    build_targets(&mut table, &[], window).map_err(|e| e.to_string())?;
    let labeled = days - window;
    let direct = (0..).take_while(|k| k * stride + lookback <= labeled).count();
    let formula = window_count(labeled, lookback, stride);
    match make_windows(&table, lookback, stride) {
        Ok(ws) => {
            if formula != Some(ws.len()) || ws.len() != direct {
                return Err(format!("n={labeled} L={lookback} s={stride}: {} windows, formula {formula:?}, direct {direct}", ws.len()));
            }
            for (k, w) in ws.iter().enumerate() {
                if w.start_row != k * stride || w.inputs.data()[..2] != table.features[k * stride][..] {
                    return Err(format!("window {k} misplaced"));
                }
            }
            Ok(())
        }
        Err(_) if direct == 0 && formula.is_none() => Ok(()),
        Err(e) => Err(e.to_string()),
    }
}

/// Chronological split of random size: partitions are disjoint, cover every
/// window, and are ordered train < val < test by anchor date.
pub fn split_trial(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    let days = rng.gen_range(40..200);
    let mut table = random_table(rng, days, 1);
    build_targets(&mut table, &[], 7).map_err(|e| e.to_string())?;
    let samples = make_windows(&table, rng.gen_range(1..10), rng.gen_range(1..4)).map_err(|e| e.to_string())?;
    let n = samples.len();
    let val = rng.gen_range(0.05..0.3);
    let test = rng.gen_range(0.05..0.3);
    let spec = SplitSpec {
        train_frac: 1.0 - val - test,
        val_frac: val,
        test_frac: test,
    };
    let all: Vec<NaiveDate> = samples.iter().map(|s| s.anchor_date).collect();
    let splits = match chrono_split(samples, &spec) {
        Ok(s) => s,
        Err(_) if spec.sizes(n).is_err() => return Ok(()),
        Err(e) => return Err(e.to_string()),
    };
    let anchors = |s: &[hazardcast::window::WindowSample]| s.iter().map(|w| w.anchor_date).collect::<Vec<_>>();
    let (tr, va, te) = (anchors(&splits.train), anchors(&splits.val), anchors(&splits.test));
    let joined: Vec<NaiveDate> = tr.iter().chain(&va).chain(&te).copied().collect();
    if joined != all {
        return Err("partitions do not cover the windows in order".into());
    }
    if tr.last() >= va.first() || va.last() >= te.first() {
        return Err("partitions overlap in time".into());
    }
    Ok(())
}
