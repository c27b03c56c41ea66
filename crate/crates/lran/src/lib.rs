//! Linear recurrent autoencoder: a convolutional encoder lifts convective
//! flux snapshots to a latent space where a learned matrix `K` advances
//! them in time, and a mirrored decoder maps them back.

use std::io;

use rbc_core::dataset::DatasetError;
use rbc_core::FieldError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod checkpoint;
mod layers;
pub mod loss;
mod model;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::{composite_loss, sequence_loss, sequence_loss_and_grad};
pub use model::{Architecture, LranModel, PARAM_NAMES};
pub use train::{train, EpochLog, TrainingLog};

#[derive(Debug, Error)]
pub enum LranError {
    #[error("field shape {got:?} does not match model grid {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("latent vector has length {got}, model expects {expected}")]
    LatentMismatch { expected: usize, got: usize },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("bad sequence: {0}")]
    BadSequence(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("training data has zero or non-finite variance")]
    ZeroVariance,
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

fn default_channels() -> [usize; 4] {
    [32, 64, 32, 32]
}

fn default_train_end() -> usize {
    470
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LranConfig {
    pub latent_dim: usize,
    pub sequence_length: usize,
    pub delta: f64,
    pub beta: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Convolution widths; the reference network uses 32, 64, 32, 32.
    #[serde(default = "default_channels")]
    pub channels: [usize; 4],
    /// First snapshot index held out of training.
    #[serde(default = "default_train_end")]
    pub train_end: usize,
}

impl Default for LranConfig {
    fn default() -> Self {
        Self {
            latent_dim: 100,
            sequence_length: 10,
            delta: 0.9,
            beta: 0.0,
            eps1: 1e-6,
            eps2: 1e-6,
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            channels: default_channels(),
            train_end: default_train_end(),
        }
    }
}

impl LranConfig {
    pub fn validate(&self) -> Result<(), LranError> {
        let bad = |msg: String| Err(LranError::InvalidConfig(msg));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if self.sequence_length == 0 {
            return bad("sequence_length must be positive".into());
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("delta {} outside (0, 1]", self.delta));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta {} must be finite and non-negative", self.beta));
        }
        if !(self.eps1 > 0.0 && self.eps2 > 0.0) {
            return bad("eps1 and eps2 must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if self.channels.contains(&0) {
            return bad("channel widths must be positive".into());
        }
        Ok(())
    }
}

