//! Forecasting architectures mapping an `L × F` window to six hazard
//! log-rates.

mod checkpoint;
mod params;
mod recurrent;
mod transformer;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::NUM_HAZARDS;
use crate::ndgrad::{Array, Graph, Var};

pub use checkpoint::{ModelCheckpoint, StoredParam, CHECKPOINT_FORMAT_VERSION};
pub use params::{BoundParams, ParamStore, Parameter};
pub use recurrent::{bahdanau_attention, bilstm_forward, lstm_forward, timestep_inputs};
pub use transformer::{pooled_attention, sinusoidal_encoding, transformer_forward, EncodedSequence, TransformerConfig};

use params::Initializer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "LSTM", alias = "lstm")]
    Lstm,
    #[serde(rename = "BiLSTM", alias = "bilstm")]
    BiLstm,
    #[serde(alias = "transformer")]
    Transformer,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Lstm, Architecture::BiLstm, Architecture::Transformer];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Lstm => "LSTM",
            Architecture::BiLstm => "BiLSTM",
            Architecture::Transformer => "Transformer",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown architecture {s:?} (LSTM, BiLSTM, Transformer)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    #[serde(default = "default_hidden")]
    pub hidden_size: usize,
    #[serde(default = "default_attention")]
    pub attention_size: usize,
    #[serde(default)]
    pub transformer: TransformerConfig,
    pub input_features: usize,
    #[serde(default = "default_outputs")]
    pub output_types: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> usize {
    64
}
fn default_attention() -> usize {
    32
}
fn default_outputs() -> usize {
    NUM_HAZARDS
}

impl ModelConfig {
    pub fn new(architecture: Architecture, input_features: usize) -> Self {
        ModelConfig {
            architecture,
            hidden_size: default_hidden(),
            attention_size: default_attention(),
            transformer: TransformerConfig::default(),
            input_features,
            output_types: NUM_HAZARDS,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.transformer;
        let sizes = [
            ("hidden_size", self.hidden_size),
            ("attention_size", self.attention_size),
            ("input_features", self.input_features),
            ("d_model", t.d_model),
            ("heads", t.heads),
            ("layers", t.layers),
            ("ffn_size", t.ffn_size),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.output_types != NUM_HAZARDS {
            return Err(Error::Config(format!(
                "output_types must be {NUM_HAZARDS}, got {}",
                self.output_types
            )));
        }
        if !t.d_model.is_multiple_of(t.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                t.d_model, t.heads
            )));
        }
        Ok(())
    }

    /// Width of the vector the output head reads.
    pub fn context_size(&self) -> usize {
        match self.architecture {
            Architecture::Lstm => self.hidden_size,
            Architecture::BiLstm => 2 * self.hidden_size,
            Architecture::Transformer => self.transformer.d_model,
        }
    }
}

/// One window's forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastOutput {
    pub log_rates: [f64; NUM_HAZARDS],
    /// Expected event counts over the forward window, `exp(log_rates)`.
    pub rates: [f64; NUM_HAZARDS],
    /// Length-L attention over input rows; sums to 1.
    pub attention: Vec<f64>,
    /// Transformer only: per layer and head `L × L` maps, rows are queries.
    pub head_attention: Vec<Array>,
}

/// Graph outputs of a batched forward pass.
pub struct ForwardPass {
    /// `B × 6`.
    pub log_rates: Var,
    /// `B × 6`, clamped `exp(log_rates)`.
    pub rates: Var,
    pub attention: Vec<Vec<f64>>,
    pub head_attention: Vec<Vec<Array>>,
}

/// Affine map from the context to six log-rates.
pub fn head(g: &mut Graph, p: &BoundParams, context: Var) -> Result<Var> {
    let w = p.var("head.w")?;
    let b = p.var("head.b")?;
    let z = g.matmul(context, w)?;
    g.add(z, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

const PREDICT_CHUNK: usize = 64;

impl Model {
    /// Builds a model with seeded initial parameters.
    pub fn new(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let mut init = Initializer {
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(config.seed),
        };
        let mut store = ParamStore::default();
        let f = config.input_features;
        match config.architecture {
            Architecture::Lstm => {
                recurrent::init_lstm(&mut store, &mut init, "lstm", f, config.hidden_size);
                recurrent::init_attention(&mut store, &mut init, config.hidden_size, config.attention_size);
            }
            Architecture::BiLstm => {
                recurrent::init_lstm(&mut store, &mut init, "fwd", f, config.hidden_size);
                recurrent::init_lstm(&mut store, &mut init, "bwd", f, config.hidden_size);
                recurrent::init_attention(&mut store, &mut init, 2 * config.hidden_size, config.attention_size);
            }
            Architecture::Transformer => {
                transformer::init_transformer(&mut store, &mut init, f, &config.transformer);
            }
        }
        store.insert("head.w", init.weight(config.context_size(), config.output_types), true);
        store.insert("head.b", Array::zeros(1, config.output_types), false);
        Ok(Model { config, params: store })
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    /// Builds the batched forward pass over already bound parameters.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, windows: &[Array]) -> Result<ForwardPass> {
        let first = windows.first().ok_or_else(|| Error::Data("empty batch".into()))?;
        let [len, f] = first.shape();
        if f != self.config.input_features {
            return Err(Error::Config(format!(
                "model expects {} features, window has {f}",
                self.config.input_features
            )));
        }
        if len == 0 {
            return Err(Error::Data("empty window".into()));
        }
        if let Some(w) = windows.iter().find(|w| w.shape() != [len, f]) {
            return Err(Error::shape("forward", &[len, f], &w.shape()));
        }

        let (context, attention, head_attention) = match self.config.architecture {
            Architecture::Lstm | Architecture::BiLstm => {
                let steps = timestep_inputs(g, windows)?;
                let (hs, state) = if self.config.architecture == Architecture::Lstm {
                    let hs = lstm_forward(g, p, "lstm", &steps)?;
                    let last = *hs.last().expect("non-empty window");
                    (hs, last)
                } else {
                    bilstm_forward(g, p, &steps)?
                };
                let (alpha, context) = bahdanau_attention(g, p, &hs, state)?;
                let a = g.value(alpha);
                let attention = (0..a.rows()).map(|r| a.row(r).to_vec()).collect();
                (context, attention, Vec::new())
            }
            Architecture::Transformer => {
                let mut pooled = Vec::with_capacity(windows.len());
                let mut attention = Vec::with_capacity(windows.len());
                let mut maps = Vec::with_capacity(windows.len());
                for w in windows {
                    let x = g.constant(w.clone());
                    let enc = transformer_forward(g, p, &self.config.transformer, x)?;
                    attention.push(pooled_attention(g, &enc.attention));
                    maps.push(enc.attention.iter().map(|&m| g.value(m).clone()).collect());
                    pooled.push(enc.pooled);
                }
                (g.concat(&pooled, 0)?, attention, maps)
            }
        };
        let log_rates = head(g, p, context)?;
        let rates = g.exp(log_rates);
        Ok(ForwardPass {
            log_rates,
            rates,
            attention,
            head_attention,
        })
    }

    /// Inference over any number of windows.
    pub fn predict(&self, windows: &[Array]) -> Result<Vec<ForecastOutput>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(PREDICT_CHUNK) {
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            let pass = self.forward(&mut g, &p, chunk)?;
            let eta = g.value(pass.log_rates);
            let lam = g.value(pass.rates);
            let mut maps = pass.head_attention.into_iter();
            for (i, attention) in pass.attention.into_iter().enumerate() {
                let mut log_rates = [0.0; NUM_HAZARDS];
                let mut rates = [0.0; NUM_HAZARDS];
                log_rates.copy_from_slice(eta.row(i));
                rates.copy_from_slice(lam.row(i));
                if !log_rates.iter().all(|x| x.is_finite()) {
                    return Err(Error::Numerical("non-finite log-rate in forward pass".into()));
                }
                out.push(ForecastOutput {
                    log_rates,
                    rates,
                    attention,
                    head_attention: maps.next().unwrap_or_default(),
                });
            }
        }
        Ok(out)
    }

    /// Rates only, for callers that evaluate many perturbed windows.
    pub fn rates(&self, windows: &[Array]) -> Result<Vec<[f64; NUM_HAZARDS]>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(PREDICT_CHUNK) {
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            let pass = self.forward(&mut g, &p, chunk)?;
            let lam = g.value(pass.rates);
            for i in 0..lam.rows() {
                let mut r = [0.0; NUM_HAZARDS];
                r.copy_from_slice(lam.row(i));
                out.push(r);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn window(len: usize, f: usize, seed: u64) -> Array {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array::from_vec(len, f, (0..len * f).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn small(arch: Architecture) -> ModelConfig {
        let mut c = ModelConfig::new(arch, 3);
        c.hidden_size = 5;
        c.attention_size = 4;
        c.transformer = TransformerConfig {
            d_model: 4,
            heads: 2,
            layers: 1,
            ffn_size: 6,
            positional_encoding: true,
        };
        c.seed = 11;
        c
    }

    #[test]
    fn config_rejects_bad_heads() {
        let mut c = small(Architecture::Transformer);
        c.transformer.heads = 3;
        assert!(matches!(Model::new(c), Err(Error::Config(_))));
        let mut c = small(Architecture::Lstm);
        c.hidden_size = 0;
        assert!(Model::new(c).is_err());
    }

    #[test]
    fn architecture_names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(serde_json::from_str::<Architecture>(&json).unwrap(), a);
        }
        assert_eq!("bilstm".parse::<Architecture>().unwrap(), Architecture::BiLstm);
    }

    #[test]
    fn forget_gate_bias_starts_at_one() {
        let m = Model::new(small(Architecture::Lstm)).unwrap();
        let b = &m.params.get("lstm.b").unwrap().value;
        assert_eq!(b.data(), &[0., 0., 0., 0., 0., 1., 1., 1., 1., 1., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0.]);
        assert!(!m.params.get("lstm.b").unwrap().decay);
        assert!(m.params.get("lstm.w_x").unwrap().decay);
    }

    #[test]
    fn init_within_fan_in_bound() {
        let m = Model::new(small(Architecture::BiLstm)).unwrap();
        for p in m.params.iter().filter(|p| p.decay) {
            let k = 1.0 / (p.value.rows() as f64).sqrt();
            assert!(p.value.data().iter().all(|x| x.abs() <= k), "{}", p.name);
        }
    }

    #[test]
    fn outputs_are_well_formed() {
        for arch in Architecture::ALL {
            let m = Model::new(small(arch)).unwrap();
            let ws: Vec<Array> = (0..3).map(|s| window(7, 3, s)).collect();
            for out in m.predict(&ws).unwrap() {
                assert_eq!(out.attention.len(), 7);
                assert_relative_eq!(out.attention.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                assert!(out.attention.iter().all(|&a| a >= 0.0));
                for h in 0..NUM_HAZARDS {
                    assert!(out.rates[h] > 0.0);
                    assert_eq!(out.rates[h], out.log_rates[h].exp());
                }
                if arch == Architecture::Transformer {
                    assert_eq!(out.head_attention.len(), 2);
                }
            }
        }
    }

    #[test]
    fn batching_does_not_change_predictions() {
        for arch in Architecture::ALL {
            let m = Model::new(small(arch)).unwrap();
            let ws: Vec<Array> = (0..4).map(|s| window(6, 3, s + 20)).collect();
            let joint = m.predict(&ws).unwrap();
            for (w, j) in ws.iter().zip(&joint) {
                let single = m.predict(std::slice::from_ref(w)).unwrap();
                for h in 0..NUM_HAZARDS {
                    assert_relative_eq!(single[0].log_rates[h], j.log_rates[h], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_head_weights_give_bias() {
        let mut m = Model::new(small(Architecture::Lstm)).unwrap();
        m.params.set("head.w", Array::zeros(5, 6)).unwrap();
        let bias = Array::from_rows(&[[0.5, -1.0, 0.0, 2.0, 0.1, -0.3]]).unwrap();
        m.params.set("head.b", bias.clone()).unwrap();
        let out = &m.predict(&[window(4, 3, 1)]).unwrap()[0];
        assert_eq!(&out.log_rates[..], bias.data());
        assert_eq!(out.rates[2], 1.0);
        assert_eq!(out.rates[3], 2f64.exp());
    }

    #[test]
    fn feature_mismatch_is_an_error() {
        let m = Model::new(small(Architecture::Transformer)).unwrap();
        assert!(m.predict(&[window(4, 2, 0)]).is_err());
    }

    #[test]
    fn same_seed_same_output() {
        for arch in Architecture::ALL {
            let a = Model::new(small(arch)).unwrap();
            let b = Model::new(small(arch)).unwrap();
            let w = [window(5, 3, 9)];
            assert_eq!(a.predict(&w).unwrap()[0].log_rates, b.predict(&w).unwrap()[0].log_rates);
        }
    }
}
