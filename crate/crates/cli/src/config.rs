//! Run configuration: the JSON file, flag overrides and seed propagation.

use std::fs;
use std::path::Path;

use hazardcast::explain::ExplainConfig;
use hazardcast::models::{Architecture, ModelConfig, TransformerConfig};
use hazardcast::pipeline::{DataConfig, IngestConfig};
use hazardcast::synth::SynthConfig;
use hazardcast::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Model settings that do not depend on the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: Architecture,
    pub hidden_size: usize,
    pub attention_size: usize,
    pub transformer: TransformerConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(Architecture::BiLstm, 1);
        ModelSection {
            architecture: m.architecture,
            hidden_size: m.hidden_size,
            attention_size: m.attention_size,
            transformer: m.transformer,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, input_features: usize, seed: u64) -> ModelConfig {
        let mut m = ModelConfig::new(self.architecture, input_features);
        m.hidden_size = self.hidden_size;
        m.attention_size = self.attention_size;
        m.transformer = self.transformer.clone();
        m.seed = seed;
        m
    }
}

/// Everything a subcommand may read. Section seeds are overwritten by the
/// top-level `seed`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub explain: ExplainConfig,
    pub ingest: IngestConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    /// Reads a config file. A run manifest is accepted too, in which case its
    /// resolved config is used.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let value = match value.get("tool").and(value.get("config")) {
            Some(inner) => inner.clone(),
            None => value,
        };
        serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.train.seed = cfg.seed;
        cfg.explain.seed = cfg.seed;
        cfg.synth.seed = cfg.seed;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_take_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"data": {"lookback": 30}, "train": {"max_epochs": 5}}"#).unwrap();
        assert_eq!(cfg.data.lookback, 30);
        assert_eq!(cfg.data.stride, DataConfig::default().stride);
        assert_eq!(cfg.train.max_epochs, 5);
        assert_eq!(cfg.model, ModelSection::default());
    }

    #[test]
    fn unknown_sections_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"modle": {}}"#).is_err());
    }

    #[test]
    fn seed_reaches_every_section() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"seed": 4, "train": {"seed": 99}}"#).unwrap();
        let cfg = RunConfig::resolve(Some(&p), None).unwrap();
        assert_eq!((cfg.train.seed, cfg.explain.seed, cfg.synth.seed), (4, 4, 4));
        let cfg = RunConfig::resolve(Some(&p), Some(7)).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed), (7, 7));
    }
}
