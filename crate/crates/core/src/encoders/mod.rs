//! Frozen speaker encoders.
//!
//! Encoders take `&self` only: nothing in this module can mutate encoder
//! parameters, and [`SpeakerEncoder::parameter_checksum`] lets callers assert
//! that across any sequence of calls. Heavy pretrained models are expected to
//! run out of process, either as a command adapter or by producing an
//! embedding file in a separate step.

mod adapters;
mod cache;
mod files;
mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::UtteranceId;
use crate::Scalar;

pub use adapters::{CommandEncoder, LengthNormalized, PrecomputedEncoder};
pub use cache::{content_digest, embed_corpus, CorpusEmbeddings, EmbeddingCache};
pub use files::{
    parse_embedding_text, read_embedding_file, write_embedding_file, write_embedding_text,
    EmbeddingFile,
};
pub use synthetic::{
    SyntheticCorpus, SyntheticCorpusConfig, SyntheticEncoder, SyntheticSpace,
    SyntheticSpeakerProfile,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding<T> {
    pub vector: Vec<T>,
    pub encoder_id: String,
    pub utterance_id: UtteranceId,
}

impl<T: Scalar> Embedding<T> {
    pub fn new(
        vector: Vec<T>,
        encoder_id: impl Into<String>,
        utterance_id: UtteranceId,
    ) -> Result<Self, EncoderError> {
        if vector.is_empty() {
            return Err(EncoderError::AudioDecodeFailure {
                utterance: utterance_id,
                reason: "empty embedding".into(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite(utterance_id));
        }
        Ok(Self {
            vector,
            encoder_id: encoder_id.into(),
            utterance_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AudioSource {
    Path(PathBuf),
    Bytes(Vec<u8>),
}

/// An utterance to embed: its id, and the audio when the encoder needs it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceRef {
    pub id: UtteranceId,
    pub audio: Option<AudioSource>,
}

impl UtteranceRef {
    pub fn id_only(id: UtteranceId) -> Self {
        Self { id, audio: None }
    }

    pub fn with_path(id: UtteranceId, path: impl Into<PathBuf>) -> Self {
        Self {
            id,
            audio: Some(AudioSource::Path(path.into())),
        }
    }
}

pub trait SpeakerEncoder<T: Scalar>: Send + Sync {
    /// Identity of the encoder and of every option affecting its output.
    fn encoder_id(&self) -> String;

    fn embed(&self, utterance: &UtteranceRef) -> Result<Embedding<T>, EncoderError>;

    /// Digest over everything that determines the encoder's output.
    fn parameter_checksum(&self) -> String;
}

impl<T: Scalar, E: SpeakerEncoder<T> + ?Sized> SpeakerEncoder<T> for Box<E> {
    fn encoder_id(&self) -> String {
        (**self).encoder_id()
    }

    fn embed(&self, utterance: &UtteranceRef) -> Result<Embedding<T>, EncoderError> {
        (**self).embed(utterance)
    }

    fn parameter_checksum(&self) -> String {
        (**self).parameter_checksum()
    }
}

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("UtteranceNotFound: `{0}`")]
    UtteranceNotFound(UtteranceId),
    #[error("EncoderLoadFailure: {0}")]
    EncoderLoadFailure(String),
    #[error("AudioDecodeFailure for `{utterance}`: {reason}")]
    AudioDecodeFailure {
        utterance: UtteranceId,
        reason: String,
    },
    #[error("embedding for `{0}` has non-finite entries")]
    NonFinite(UtteranceId),
    #[error("embedding dimension changed for encoder `{encoder_id}`: {expected} then {found}")]
    DimensionChanged {
        encoder_id: String,
        expected: usize,
        found: usize,
    },
    #[error("corrupt embedding data: {0}")]
    Corrupt(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_rejects_non_finite_entries() {
        let err = Embedding::new(vec![1.0f64, f64::NAN], "x", "u1".into()).unwrap_err();
        assert!(matches!(err, EncoderError::NonFinite(_)));
        assert!(Embedding::<f32>::new(vec![], "x", "u1".into()).is_err());
        assert_eq!(Embedding::new(vec![1.0f32, 2.0], "x", "u".into()).unwrap().dim(), 2);
    }
}
