//! Checkpoints that carry enough configuration to rebuild the model.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint, Maker, ModelConfig, TrainingState};
use crate::error::{Error, Result};
use crate::prompt_lm::{FrozenLmProvider, ProviderSpec};

/// The configuration document stored in a model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub model: ModelConfig,
    /// `stub` or `pretrained:<model-dir>`.
    pub lm_provider: String,
    /// Checksum of the provider's frozen tables at save time.
    pub lm_checksum: String,
    /// Name written into prompts.
    pub dataset_name: String,
}

impl Maker {
    pub fn header(&self, lm_provider: &ProviderSpec, dataset_name: &str) -> ModelHeader {
        ModelHeader {
            model: self.cfg.clone(),
            lm_provider: lm_provider.to_string(),
            lm_checksum: self.lm().checksum(),
            dataset_name: dataset_name.to_string(),
        }
    }

    pub fn save(&self, path: &Path, header: &ModelHeader, state: &TrainingState) -> Result<()> {
        let json = serde_json::to_string(header).expect("header serializes");
        save_checkpoint(path, &json, state, &self.params)
    }

    /// Rebuilds a model with an already loaded provider, which must be the
    /// one the checkpoint was trained with.
    pub fn from_checkpoint(ckpt: Checkpoint, lm: Arc<dyn FrozenLmProvider>) -> Result<(Self, ModelHeader, TrainingState)> {
        let header: ModelHeader = serde_json::from_str(&ckpt.config_json).map_err(|e| Error::Format {
            what: "checkpoint",
            detail: format!("model header: {e}"),
        })?;
        if lm.checksum() != header.lm_checksum {
            return Err(Error::Config(format!(
                "language model `{}` differs from the one this checkpoint was trained with",
                lm.describe()
            )));
        }
        let model = Self::with_params(header.model.clone(), lm, ckpt.params)?;
        Ok((model, header, ckpt.state))
    }

    /// Loads a checkpoint and the provider named in its header.
    pub fn load(path: &Path) -> Result<(Self, ModelHeader, TrainingState)> {
        Self::load_with(load_checkpoint(path)?)
    }

    pub fn load_bytes(bytes: &[u8]) -> Result<(Self, ModelHeader, TrainingState)> {
        Self::load_with(read_checkpoint(bytes)?)
    }

    fn load_with(ckpt: Checkpoint) -> Result<(Self, ModelHeader, TrainingState)> {
        let header: ModelHeader = serde_json::from_str(&ckpt.config_json).map_err(|e| Error::Format {
            what: "checkpoint",
            detail: format!("model header: {e}"),
        })?;
        let lm = ProviderSpec::parse(&header.lm_provider)?.load()?;
        Self::from_checkpoint(ckpt, lm)
    }
}
