//! Pre-norm transformer encoder with sinusoidal positions and mean pooling.

use serde::{Deserialize, Serialize};

use super::params::{BoundParams, Initializer, ParamStore};
use crate::error::{Error, Result};
use crate::ndgrad::{Array, Graph, Var};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_size: usize,
    pub positional_encoding: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            d_model: 32,
            heads: 4,
            layers: 2,
            ffn_size: 64,
            positional_encoding: true,
        }
    }
}

pub(crate) fn init_transformer(store: &mut ParamStore, init: &mut Initializer, inputs: usize, cfg: &TransformerConfig) {
    let d = cfg.d_model;
    store.insert("tf.w_in", init.weight(inputs, d), true);
    store.insert("tf.b_in", Array::zeros(1, d), false);
    for l in 0..cfg.layers {
        store.insert(format!("tf.{l}.ln1.gain"), Array::filled(1, d, 1.0), false);
        store.insert(format!("tf.{l}.ln1.bias"), Array::zeros(1, d), false);
        for w in ["wq", "wk", "wv", "wo"] {
            store.insert(format!("tf.{l}.{w}"), init.weight(d, d), true);
        }
        store.insert(format!("tf.{l}.bo"), Array::zeros(1, d), false);
        store.insert(format!("tf.{l}.ln2.gain"), Array::filled(1, d, 1.0), false);
        store.insert(format!("tf.{l}.ln2.bias"), Array::zeros(1, d), false);
        store.insert(format!("tf.{l}.ffn.w1"), init.weight(d, cfg.ffn_size), true);
        store.insert(format!("tf.{l}.ffn.b1"), Array::zeros(1, cfg.ffn_size), false);
        store.insert(format!("tf.{l}.ffn.w2"), init.weight(cfg.ffn_size, d), true);
        store.insert(format!("tf.{l}.ffn.b2"), Array::zeros(1, d), false);
    }
    store.insert("tf.ln_f.gain", Array::filled(1, d, 1.0), false);
    store.insert("tf.ln_f.bias", Array::zeros(1, d), false);
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(…)`.
pub fn sinusoidal_encoding(len: usize, d_model: usize) -> Array {
    let mut pe = Array::zeros(len, d_model);
    for pos in 0..len {
        for j in 0..d_model {
            let i2 = (j / 2 * 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(i2 / d_model as f64);
            pe.set(pos, j, if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

fn layer_norm(g: &mut Graph, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let mean = g.mean(x, 1)?;
    let centered = g.sub(x, mean)?;
    let sq = g.mul(centered, centered)?;
    let var = g.mean(sq, 1)?;
    let var = g.shift(var, LAYER_NORM_EPS);
    let inv_std = g.powf(var, -0.5);
    let normed = g.mul(centered, inv_std)?;
    let scaled = g.mul(normed, gain)?;
    g.add(scaled, bias)
}

/// Encoder output for one window.
pub struct EncodedSequence {
    /// `L × d_model` final-layer outputs.
    pub outputs: Var,
    /// `1 × d_model` mean over time.
    pub pooled: Var,
    /// Attention maps (`L × L`, rows are queries), layer-major then head.
    pub attention: Vec<Var>,
}

/// Encodes `input` (an `L × F` node) through every layer.
pub fn transformer_forward(g: &mut Graph, p: &BoundParams, cfg: &TransformerConfig, input: Var) -> Result<EncodedSequence> {
    let d = cfg.d_model;
    if cfg.heads == 0 || !d.is_multiple_of(cfg.heads) {
        return Err(Error::Config(format!(
            "d_model {d} is not divisible by {} heads",
            cfg.heads
        )));
    }
    let dk = d / cfg.heads;
    let len = g.shape(input)[0];

    let w_in = p.var("tf.w_in")?;
    let b_in = p.var("tf.b_in")?;
    let projected = g.matmul(input, w_in)?;
    let mut h = g.add(projected, b_in)?;
    if cfg.positional_encoding {
        let pe = g.constant(sinusoidal_encoding(len, d));
        h = g.add(h, pe)?;
    }

    let scale = 1.0 / (dk as f64).sqrt();
    let mut maps = Vec::with_capacity(cfg.layers * cfg.heads);
    for l in 0..cfg.layers {
        let name = |s: &str| format!("tf.{l}.{s}");
        let n1 = layer_norm(g, h, p.var(&name("ln1.gain"))?, p.var(&name("ln1.bias"))?)?;
        let q = g.matmul(n1, p.var(&name("wq"))?)?;
        let k = g.matmul(n1, p.var(&name("wk"))?)?;
        let v = g.matmul(n1, p.var(&name("wv"))?)?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for head in 0..cfg.heads {
            let qh = g.slice(q, 1, head * dk, dk)?;
            let kh = g.slice(k, 1, head * dk, dk)?;
            let vh = g.slice(v, 1, head * dk, dk)?;
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax(scores, 1)?;
            maps.push(attn);
            heads.push(g.matmul(attn, vh)?);
        }
        let merged = g.concat(&heads, 1)?;
        let out = g.matmul(merged, p.var(&name("wo"))?)?;
        let out = g.add(out, p.var(&name("bo"))?)?;
        h = g.add(h, out)?;

        let n2 = layer_norm(g, h, p.var(&name("ln2.gain"))?, p.var(&name("ln2.bias"))?)?;
        let hidden = g.matmul(n2, p.var(&name("ffn.w1"))?)?;
        let hidden = g.add(hidden, p.var(&name("ffn.b1"))?)?;
        let hidden = g.tanh(hidden);
        let ff = g.matmul(hidden, p.var(&name("ffn.w2"))?)?;
        let ff = g.add(ff, p.var(&name("ffn.b2"))?)?;
        h = g.add(h, ff)?;
    }
    let outputs = layer_norm(g, h, p.var("tf.ln_f.gain")?, p.var("tf.ln_f.bias")?)?;
    let pooled = g.mean(outputs, 0)?;
    Ok(EncodedSequence {
        outputs,
        pooled,
        attention: maps,
    })
}

/// Mean over heads and layers of the attention the final query row pays to
/// each position.
pub fn pooled_attention(g: &Graph, maps: &[Var]) -> Vec<f64> {
    let Some(&first) = maps.first() else {
        return Vec::new();
    };
    let len = g.shape(first)[0];
    let mut out = vec![0.0; len];
    for &m in maps {
        for (o, &a) in out.iter_mut().zip(g.value(m).row(len - 1)) {
            *o += a;
        }
    }
    out.iter_mut().for_each(|o| *o /= maps.len() as f64);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_first_rows() {
        let pe = sinusoidal_encoding(2, 4);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(pe.get(1, 0), 1f64.sin());
        assert_eq!(pe.get(1, 3), (1.0 / 100.0f64).cos());
    }
}
