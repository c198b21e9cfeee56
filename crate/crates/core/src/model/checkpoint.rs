use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, N_TARGETS};
use crate::nn::{Normalizer, ShapeError};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to run inference: weights keyed by block name, the
/// normalizer fitted on the training set, and the window size trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub window_s: f64,
    pub normalizer: Normalizer,
    pub blocks: ModelParams,
    /// Training settings, recorded for provenance only.
    #[serde(default)]
    pub hyperparameters: serde_json::Value,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{path}: unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { path: PathBuf, found: u32 },
    #[error("{path}: {source}")]
    Shape { path: PathBuf, source: ShapeError },
}

impl Checkpoint {
    pub fn new(config: ModelConfig, window_s: f64, normalizer: Normalizer, blocks: ModelParams) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config,
            window_s,
            normalizer,
            blocks,
            hyperparameters: serde_json::Value::Null,
        }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        if self.config.n_targets != N_TARGETS {
            return Err(ShapeError::new(format!(
                "readout has {} targets, expected {N_TARGETS}",
                self.config.n_targets
            )));
        }
        if self.config.state_dim == 0 || self.config.mp_iterations == 0 {
            return Err(ShapeError::new("state_dim and mp_iterations must be positive"));
        }
        self.blocks.check(&self.config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_json()).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let p = || path.to_path_buf();
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io { path: p(), source })?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|source| CheckpointError::Parse { path: p(), source })?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            path: p(),
            found: ckpt.version,
        });
    }
    ckpt.validate()
        .map_err(|source| CheckpointError::Shape { path: p(), source })?;
    Ok(ckpt)
}
