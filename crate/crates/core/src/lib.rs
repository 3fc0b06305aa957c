//! Voice timbre attribute detection (vTAD) benchmark toolkit.
//!
//! Given two utterances from different speakers and a timbre descriptor such
//! as *bright* or *hoarse*, a vTAD system scores the hypothesis that the
//! second utterance is stronger than the first in that descriptor. This crate
//! covers the whole benchmark path:
//!
//! - [`corpus`]: descriptor vocabulary, speaker inventory, ordered-pair
//!   annotation ingestion and validation.
//! - [`protocol`]: seen/unseen splits and deterministic trial lists with
//!   100 positive and 300 negative trials per evaluation cell.
//! - [`encoders`]: frozen speaker-embedding adapters, an on-disk cache and a
//!   synthetic encoder with analytically known attribute directions.
//! - [`diffnet`]: the baseline comparator (concatenated embeddings through
//!   FC/BN layers to per-descriptor sigmoids), its training and inference.
//! - [`scoring`]: EER and accuracy per (gender, descriptor) cell, submission
//!   validation and the cross-cell average used for ranking.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the default precision.

pub mod corpus;
pub mod diffnet;
pub mod encoders;
pub mod protocol;
pub mod report;
pub mod rng;
mod scalar;
pub mod scoring;

pub use scalar::{Scalar, ScalarKind};

/// Default working precision.
pub type Real = f64;

pub type Embedding = encoders::Embedding<Real>;
pub type DiffNet = diffnet::DiffNetModel<Real>;
pub type TrainingExample = diffnet::TrainingExample<Real>;
pub type SyntheticEncoder = encoders::SyntheticEncoder<Real>;
pub type PredictionRecord = diffnet::PredictionRecord<Real>;
