use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::ingest::Standardizer;
use crate::ndgrad::Array;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredParam {
    pub shape: [usize; 2],
    /// Row-major.
    pub values: Vec<f64>,
}

/// A trained model with everything needed to score new windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub feature_names: Vec<String>,
    pub standardizer: Option<Standardizer>,
    pub parameters: BTreeMap<String, StoredParam>,
    /// Windowing settings the model was trained with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_config: Option<serde_json::Value>,
}

impl ModelCheckpoint {
    pub fn from_model(model: &Model, feature_names: Vec<String>, standardizer: Option<Standardizer>) -> Self {
        let parameters = model
            .params
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    StoredParam {
                        shape: p.value.shape(),
                        values: p.value.data().to_vec(),
                    },
                )
            })
            .collect();
        ModelCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model_config: model.config.clone(),
            feature_names,
            standardizer,
            parameters,
            data_config: None,
        }
    }

    /// Rebuilds the model; every parameter must be present with its expected
    /// shape and no extras are allowed.
    pub fn to_model(&self) -> Result<Model> {
        self.check_version()?;
        let mut model = Model::new(self.model_config.clone())?;
        if self.parameters.len() != model.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, architecture needs {}",
                self.parameters.len(),
                model.params.len()
            )));
        }
        for p in model.params.iter_mut() {
            let stored = self
                .parameters
                .get(&p.name)
                .ok_or_else(|| Error::Config(format!("checkpoint is missing parameter {}", p.name)))?;
            if stored.shape != p.value.shape() {
                return Err(Error::Config(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    stored.shape,
                    p.value.shape()
                )));
            }
            p.value = Array::from_vec(stored.shape[0], stored.shape[1], stored.values.clone())?;
        }
        Ok(model)
    }

    fn check_version(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint format_version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::file(path, e))?;
        w.flush().map_err(|e| Error::file(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        let ckpt: ModelCheckpoint = serde_json::from_reader(BufReader::new(file))?;
        ckpt.check_version()?;
        Ok(ckpt)
    }
}
