//! LSTM and BiLSTM encoders plus additive (Bahdanau) attention, batched over
//! the leading dimension.

use super::params::{BoundParams, Initializer, ParamStore};
use crate::error::{Error, Result};
use crate::ndgrad::{Array, Graph, Var};

/// Parameters of one LSTM direction under `prefix`: `w_x` (F × 4H), `w_h`
/// (H × 4H) and `b` (1 × 4H), gate blocks ordered input, forget, candidate,
/// output.
pub(crate) fn init_lstm(store: &mut ParamStore, init: &mut Initializer, prefix: &str, inputs: usize, hidden: usize) {
    store.insert(format!("{prefix}.w_x"), init.weight(inputs, 4 * hidden), true);
    store.insert(format!("{prefix}.w_h"), init.weight(hidden, 4 * hidden), true);
    let mut bias = Array::zeros(1, 4 * hidden);
    for j in hidden..2 * hidden {
        bias.set(0, j, 1.0);
    }
    store.insert(format!("{prefix}.b"), bias, false);
}

pub(crate) fn init_attention(store: &mut ParamStore, init: &mut Initializer, state: usize, attn: usize) {
    store.insert("attn.w1", init.weight(state, attn), true);
    store.insert("attn.w2", init.weight(state, attn), true);
    store.insert("attn.v", init.weight(attn, 1), true);
}

/// Splits a batch of `L × F` windows into `L` per-timestep `B × F` blocks.
pub fn timestep_inputs(g: &mut Graph, windows: &[Array]) -> Result<Vec<Var>> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Data("empty batch".into()))?;
    let [len, f] = first.shape();
    let mut steps = Vec::with_capacity(len);
    for t in 0..len {
        let mut data = Vec::with_capacity(windows.len() * f);
        for w in windows {
            if w.shape() != [len, f] {
                return Err(Error::shape("timestep_inputs", &[len, f], &w.shape()));
            }
            data.extend_from_slice(w.row(t));
        }
        steps.push(g.constant(Array::from_vec(windows.len(), f, data)?));
    }
    Ok(steps)
}

/// Runs one LSTM direction over `steps` (each `B × F`) from a zero state and
/// returns the hidden state after every step.
pub fn lstm_forward(g: &mut Graph, p: &BoundParams, prefix: &str, steps: &[Var]) -> Result<Vec<Var>> {
    let w_x = p.var(&format!("{prefix}.w_x"))?;
    let w_h = p.var(&format!("{prefix}.w_h"))?;
    let b = p.var(&format!("{prefix}.b"))?;
    let [f_params, four_h] = g.shape(w_x);
    let hidden = four_h / 4;
    let batch = steps.first().map_or(0, |&x| g.shape(x)[0]);
    if let Some(&x) = steps.first() {
        if g.shape(x)[1] != f_params {
            return Err(Error::shape("lstm_forward", &[f_params], &g.shape(x)));
        }
    }

    let mut h = g.constant(Array::zeros(batch, hidden));
    let mut c = g.constant(Array::zeros(batch, hidden));
    let mut hs = Vec::with_capacity(steps.len());
    for &x in steps {
        let zx = g.matmul(x, w_x)?;
        let zh = g.matmul(h, w_h)?;
        let z = g.add(zx, zh)?;
        let z = g.add(z, b)?;
        let i = g.slice(z, 1, 0, hidden)?;
        let i = g.sigmoid(i);
        let f = g.slice(z, 1, hidden, hidden)?;
        let f = g.sigmoid(f);
        let cand = g.slice(z, 1, 2 * hidden, hidden)?;
        let cand = g.tanh(cand);
        let o = g.slice(z, 1, 3 * hidden, hidden)?;
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        c = g.add(keep, write)?;
        let squashed = g.tanh(c);
        h = g.mul(o, squashed)?;
        hs.push(h);
    }
    Ok(hs)
}

/// Forward and backward LSTMs; `h_t = [fwd h_t, bwd h_t]` and the summary
/// state is `[fwd h_L, bwd h_1]`.
pub fn bilstm_forward(g: &mut Graph, p: &BoundParams, steps: &[Var]) -> Result<(Vec<Var>, Var)> {
    let fwd = lstm_forward(g, p, "fwd", steps)?;
    let reversed: Vec<Var> = steps.iter().rev().copied().collect();
    let mut bwd = lstm_forward(g, p, "bwd", &reversed)?;
    bwd.reverse();
    let hs = fwd
        .iter()
        .zip(&bwd)
        .map(|(&a, &b)| g.concat(&[a, b], 1))
        .collect::<Result<Vec<_>>>()?;
    let (Some(&f_last), Some(&b_first)) = (fwd.last(), bwd.first()) else {
        return Err(Error::Data("empty sequence".into()));
    };
    let state = g.concat(&[f_last, b_first], 1)?;
    Ok((hs, state))
}

/// Additive attention: `score_t = vᵀ tanh(W₁ h_t + W₂ s)`,
/// `α = softmax_t(score)`, `c = Σ_t α_t h_t`. Returns `α` (`B × L`) and
/// `c` (`B × H'`).
pub fn bahdanau_attention(g: &mut Graph, p: &BoundParams, hs: &[Var], state: Var) -> Result<(Var, Var)> {
    let w1 = p.var("attn.w1")?;
    let w2 = p.var("attn.w2")?;
    let v = p.var("attn.v")?;
    let query = g.matmul(state, w2)?;
    let mut scores = Vec::with_capacity(hs.len());
    for &h in hs {
        let keys = g.matmul(h, w1)?;
        let e = g.add(keys, query)?;
        let e = g.tanh(e);
        scores.push(g.matmul(e, v)?);
    }
    let scores = g.concat(&scores, 1)?;
    let alpha = g.softmax(scores, 1)?;
    let mut context: Option<Var> = None;
    for (t, &h) in hs.iter().enumerate() {
        let a_t = g.slice(alpha, 1, t, 1)?;
        let weighted = g.mul(h, a_t)?;
        context = Some(match context {
            Some(acc) => g.add(acc, weighted)?,
            None => weighted,
        });
    }
    let context = context.ok_or_else(|| Error::Data("empty sequence".into()))?;
    Ok((alpha, context))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn store_with(entries: &[(&str, Array)]) -> ParamStore {
        let mut s = ParamStore::default();
        for (name, value) in entries {
            s.insert(*name, value.clone(), true);
        }
        s
    }

    #[test]
    fn zero_weights_zero_inputs_stay_at_rest() {
        let store = store_with(&[
            ("lstm.w_x", Array::zeros(3, 8)),
            ("lstm.w_h", Array::zeros(2, 8)),
            ("lstm.b", Array::zeros(1, 8)),
        ]);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let steps = timestep_inputs(&mut g, &[Array::zeros(5, 3)]).unwrap();
        for h in lstm_forward(&mut g, &p, "lstm", &steps).unwrap() {
            assert!(g.value(h).data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn unit_weights_zero_input_single_step() {
        // i = f = o = σ(0) = 0.5, candidate tanh(0) = 0, so c₁ = h₁ = 0
        let store = store_with(&[
            ("lstm.w_x", Array::filled(1, 4, 1.0)),
            ("lstm.w_h", Array::filled(1, 4, 1.0)),
            ("lstm.b", Array::zeros(1, 4)),
        ]);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let steps = timestep_inputs(&mut g, &[Array::zeros(1, 1)]).unwrap();
        let hs = lstm_forward(&mut g, &p, "lstm", &steps).unwrap();
        assert_eq!(g.value(hs[0]).item(), 0.0);
    }

    #[test]
    fn hand_evaluated_two_steps() {
        // unit weights, zero bias, x = 1, zero state: every preactivation is 1
        let store = store_with(&[
            ("lstm.w_x", Array::filled(1, 4, 1.0)),
            ("lstm.w_h", Array::filled(1, 4, 1.0)),
            ("lstm.b", Array::zeros(1, 4)),
        ]);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let steps = timestep_inputs(&mut g, &[Array::filled(2, 1, 1.0)]).unwrap();
        let hs = lstm_forward(&mut g, &p, "lstm", &steps).unwrap();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let c1 = sig(1.0) * 1f64.tanh();
        let h1 = sig(1.0) * c1.tanh();
        assert_relative_eq!(g.value(hs[0]).item(), h1, epsilon = 1e-15);
        let z2 = 1.0 + h1;
        let c2 = sig(z2) * c1 + sig(z2) * z2.tanh();
        let h2 = sig(z2) * c2.tanh();
        assert_relative_eq!(g.value(hs[1]).item(), h2, epsilon = 1e-15);
    }

    #[test]
    fn identical_states_give_uniform_attention() {
        let mut init = Initializer {
            rng: rand::SeedableRng::seed_from_u64(3),
        };
        let mut store = ParamStore::default();
        init_attention(&mut store, &mut init, 4, 3);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let h = g.constant(Array::from_rows(&[[0.3, -0.2, 0.9, 0.1]]).unwrap());
        let hs = vec![h; 5];
        let (alpha, c) = bahdanau_attention(&mut g, &p, &hs, h).unwrap();
        for &a in g.value(alpha).data() {
            assert_relative_eq!(a, 0.2, epsilon = 1e-15);
        }
        for (x, y) in g.value(c).data().iter().zip(g.value(h).data()) {
            assert_relative_eq!(*x, *y, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_step_softmax_weights() {
        // v = [1], W1 = [1], W2 = [0]: scores are tanh(h_t); pick h_t so that
        // tanh(h_1) = ln 3 is impossible (|tanh| < 1), so scale v instead.
        let ln3 = 3f64.ln();
        let store = store_with(&[
            ("attn.w1", Array::scalar(1.0)),
            ("attn.w2", Array::scalar(0.0)),
            ("attn.v", Array::scalar(ln3 / 0.5f64.tanh())),
        ]);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let h1 = g.constant(Array::scalar(0.5));
        let h2 = g.constant(Array::scalar(0.0));
        let (alpha, _) = bahdanau_attention(&mut g, &p, &[h1, h2], h2).unwrap();
        assert_relative_eq!(g.value(alpha).get(0, 0), 0.75, epsilon = 1e-12);
        assert_relative_eq!(g.value(alpha).get(0, 1), 0.25, epsilon = 1e-12);
    }
}
