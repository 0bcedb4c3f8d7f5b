//! Optimization, evaluation, attention reports and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod eval;
pub mod tables;
pub mod trainer;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ManifestEntry, FORMAT_VERSION};
pub use eval::{
    evaluate, export_attention, predict_group, AttentionReport, ConfusionMatrix, Evaluation,
    Prediction,
};
pub use trainer::{augment_with_flips, EpochStats, Trainer};

use serde::{Deserialize, Serialize};

use crate::data::DataError;
use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("missing gradient for parameter {0}")]
    MissingGradient(String),
    #[error("optimizer state does not match parameters: {0}")]
    OptimizerMismatch(String),
    #[error("non-finite value after update in {0}")]
    NonFinite(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint is malformed: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// epochs between learning-rate decays
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub seed: u64,
    /// add the mirrored copy of every training sample
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-3,
            lr_step: 7,
            lr_gamma: 0.1,
            epochs: 40,
            batch_size: 16,
            alpha: 2.0,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return fail("initial_lr must be positive");
        }
        if self.lr_step == 0 || self.epochs == 0 || self.batch_size == 0 {
            return fail("lr_step, epochs and batch_size must be positive");
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return fail("lr_gamma must be in (0, 1]");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail("alpha must be a finite non-negative number");
        }
        Ok(())
    }
}

/// Step decay: `initial_lr · gamma^floor(epoch / lr_step)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.initial_lr * cfg.lr_gamma.powi((epoch / cfg.lr_step) as i32)
}
