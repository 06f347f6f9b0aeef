use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::EigenGcnModel;
use super::preprocess::PreprocessConfig;
use super::train::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a trained model and rerun its preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: EigenGcnModel,
    pub train: TrainConfig,
    pub levels: usize,
    pub pooling_ratio: usize,
    pub preprocess_seed: u64,
    pub canonical: bool,
}

impl Checkpoint {
    pub fn new(model: EigenGcnModel, train: TrainConfig, pre: &PreprocessConfig) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            model,
            train,
            levels: pre.levels,
            pooling_ratio: pre.pooling_ratio,
            preprocess_seed: pre.seed,
            canonical: pre.canonical,
        }
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            levels: self.levels,
            pool_h: self.model.config.pool_h,
            pooling_ratio: self.pooling_ratio,
            seed: self.preprocess_seed,
            canonical: self.canonical,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", c.version)));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
