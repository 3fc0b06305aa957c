//! The Diff-Net comparator: `[e_A; e_B]` through fully connected hidden
//! blocks (FC, optional batch normalization, activation) and a final FC layer
//! with one sigmoid per descriptor node.

mod io;
mod network;
mod pipeline;
mod predict;
mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Descriptor, UtteranceId};

pub use io::{load_model, load_model_with_state, save_model, save_model_with_state, MODEL_FORMAT_VERSION};
pub use network::{BatchNorm, DiffNetModel, Gradients, HiddenLayer};
pub use pipeline::{prepare_task, train_for_split, training_tasks, TrainingTask};
pub use predict::{predict_trials, EmbeddingLookup, ModelSet, PredictionRecord};
pub use train::{
    train, AdamState, EpochRecord, ExampleSource, PairSampler, Trainer, TrainingExample,
    TrainingLog,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

/// How descriptor nodes are laid out across models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadLayout {
    /// One model per gender over that gender's admissible descriptors.
    #[default]
    PerGender,
    /// A single model over the full vocabulary.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Random utterance pairs drawn per annotated speaker pair and epoch.
    pub pairs_per_annotation: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Weight of the newest epoch in the smoothed loss.
    pub smoothing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 30,
            seed: 2025,
            optimizer: Optimizer::Adam,
            pairs_per_annotation: 8,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            smoothing: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffNetConfig {
    /// Twice the embedding width; 0 means "take it from the encoder".
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    /// Number of descriptor nodes; 0 means "take it from the vocabulary".
    pub output_dim: usize,
    pub use_batch_norm: bool,
    pub activation: Activation,
    pub threshold: f64,
    pub heads: HeadLayout,
    pub train: TrainConfig,
}

impl Default for DiffNetConfig {
    fn default() -> Self {
        Self {
            input_dim: 0,
            hidden_layers: vec![256, 256],
            output_dim: 0,
            use_batch_norm: true,
            activation: Activation::Tanh,
            threshold: 0.5,
            heads: HeadLayout::PerGender,
            train: TrainConfig::default(),
        }
    }
}

impl DiffNetConfig {
    /// Copy with the input and output widths bound.
    pub fn bound(&self, embedding_dim: usize, nodes: usize) -> Self {
        Self {
            input_dim: 2 * embedding_dim,
            output_dim: nodes,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), DiffNetError> {
        let bad = |m: String| Err(DiffNetError::InvalidConfig(m));
        if self.input_dim == 0 || !self.input_dim.is_multiple_of(2) {
            return bad(format!("input_dim must be even and positive, got {}", self.input_dim));
        }
        if self.output_dim == 0 {
            return bad("output_dim must be at least 1".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0,1), got {}", self.threshold));
        }
        if self.hidden_layers.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        let t = &self.train;
        if t.batch_size == 0 || t.pairs_per_annotation == 0 {
            return bad("batch_size and pairs_per_annotation must be positive".into());
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", t.learning_rate));
        }
        if !(0.0..=1.0).contains(&t.bn_momentum) || !(t.bn_eps > 0.0) {
            return bad("bn_momentum must lie in [0,1] and bn_eps be positive".into());
        }
        if !(t.smoothing > 0.0 && t.smoothing <= 1.0) {
            return bad(format!("smoothing must lie in (0,1], got {}", t.smoothing));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DiffNetError {
    #[error("EmptyTrainingSet: no training examples")]
    EmptyTrainingSet,
    #[error("NonFiniteLoss at epoch {epoch}, batch {batch}: loss {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("AllMasked at epoch {epoch}, batch {batch}: no supervised node")]
    AllMasked { epoch: usize, batch: usize },
    #[error("DimensionMismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("EncoderMismatch: model bound to `{model}`, embedding from `{embedding}`")]
    EncoderMismatch { model: String, embedding: String },
    #[error("MissingEmbedding: `{0}`")]
    MissingEmbedding(UtteranceId),
    #[error("UnknownDescriptorNode: `{0}`")]
    UnknownDescriptorNode(Descriptor),
    #[error("no model covers trial `{0}`")]
    NoModelForTrial(String),
    #[error("CorruptModelFile: {0}")]
    CorruptModelFile(String),
    #[error("VersionMismatch: file version {found}, supported {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("model stored as {stored}, requested {requested}")]
    PrecisionMismatch { stored: String, requested: String },
    #[error("invalid Diff-Net configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
