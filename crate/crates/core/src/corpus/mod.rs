//! Descriptor vocabulary, speaker inventory and ordered-pair annotations.
//!
//! Everything here is immutable once built. Constructors validate the full
//! set of invariants so downstream modules can rely on them without
//! re-checking.

mod annotations;
pub mod fixture;
mod inventory;
mod vocabulary;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use annotations::{
    descriptor_distribution, parse_annotations, write_annotations, AnnotationSet,
    OrderedPairAnnotation,
};
pub use inventory::{
    parse_gender_map, parse_inventory, validate_inventory, write_inventory, InventoryReport,
    ShortSpeaker, SpeakerInventory, SpeakerRecord,
};
pub use vocabulary::{
    default_vocabulary, Descriptor, DescriptorEntry, DescriptorVocabulary, GenderRestriction,
    TABLE_REFERENCE_SUM,
};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(raw: impl AsRef<str>) -> Self {
                Self(raw.as_ref().trim().to_string())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(raw: &str) -> Self {
                Self::new(raw)
            }
        }
    };
}

string_id!(
    /// Speaker token, e.g. `p225`.
    SpeakerId
);
string_id!(
    /// Utterance token, unique across the whole corpus, e.g. `p225_003`.
    UtteranceId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }

    pub fn parse(token: &str) -> Option<Gender> {
        match token.trim().to_ascii_lowercase().as_str() {
            "f" | "female" => Some(Gender::Female),
            "m" | "male" => Some(Gender::Male),
            _ => None,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: UnknownSpeaker `{speaker}`")]
    UnknownSpeaker { line: usize, speaker: SpeakerId },
    #[error("line {line}: UnknownDescriptor `{descriptor}`")]
    UnknownDescriptor { line: usize, descriptor: String },
    #[error("line {line}: GenderViolation: `{descriptor}` is not valid for a {gender} pair")]
    GenderViolation {
        line: usize,
        descriptor: Descriptor,
        gender: Gender,
    },
    #[error("line {line}: GenderViolation: cross-gender pair {weaker} ({weaker_gender}) -> {stronger} ({stronger_gender})")]
    CrossGenderPair {
        line: usize,
        weaker: SpeakerId,
        weaker_gender: Gender,
        stronger: SpeakerId,
        stronger_gender: Gender,
    },
    #[error("line {line}: SelfPair: speaker `{speaker}` compared with itself")]
    SelfPair { line: usize, speaker: SpeakerId },
    #[error("line {line}: DescriptorCountViolation: {count} descriptors (expected 1 to 3)")]
    DescriptorCountViolation { line: usize, count: usize },
    #[error("line {line}: DuplicateTriple ({weaker}, {stronger}, {descriptor}) first seen on line {first_line}")]
    DuplicateTriple {
        line: usize,
        first_line: usize,
        weaker: SpeakerId,
        stronger: SpeakerId,
        descriptor: Descriptor,
    },
    #[error("line {line}: ContradictoryTriple ({weaker}, {stronger}, {descriptor}) reverses line {first_line}")]
    ContradictoryTriple {
        line: usize,
        first_line: usize,
        weaker: SpeakerId,
        stronger: SpeakerId,
        descriptor: Descriptor,
    },
    #[error("line {line}: DuplicateSpeaker `{speaker}`")]
    DuplicateSpeaker { line: usize, speaker: SpeakerId },
    #[error("line {line}: DuplicateUtterance `{utterance}`")]
    DuplicateUtterance { line: usize, utterance: UtteranceId },
    #[error("line {line}: speaker `{speaker}` has no utterances")]
    EmptyUtterances { line: usize, speaker: SpeakerId },
    #[error("line {line}: unknown gender `{token}`")]
    UnknownGender { line: usize, token: String },
    #[error("EmptyAnnotationSet")]
    EmptyAnnotationSet,
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
}

impl CorpusError {
    /// Error class name, stable for operator-facing messages.
    pub fn class(&self) -> &'static str {
        match self {
            CorpusError::Io(_) => "Io",
            CorpusError::MalformedRow { .. } => "MalformedRow",
            CorpusError::UnknownSpeaker { .. } => "UnknownSpeaker",
            CorpusError::UnknownDescriptor { .. } => "UnknownDescriptor",
            CorpusError::GenderViolation { .. } | CorpusError::CrossGenderPair { .. } => {
                "GenderViolation"
            }
            CorpusError::SelfPair { .. } => "SelfPair",
            CorpusError::DescriptorCountViolation { .. } => "DescriptorCountViolation",
            CorpusError::DuplicateTriple { .. } => "DuplicateTriple",
            CorpusError::ContradictoryTriple { .. } => "ContradictoryTriple",
            CorpusError::DuplicateSpeaker { .. } => "DuplicateSpeaker",
            CorpusError::DuplicateUtterance { .. } => "DuplicateUtterance",
            CorpusError::EmptyUtterances { .. } => "EmptyUtterances",
            CorpusError::UnknownGender { .. } => "UnknownGender",
            CorpusError::EmptyAnnotationSet => "EmptyAnnotationSet",
            CorpusError::InvalidVocabulary(_) => "InvalidVocabulary",
        }
    }

    /// 1-based source line, when the error is tied to one.
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::MalformedRow { line, .. }
            | CorpusError::UnknownSpeaker { line, .. }
            | CorpusError::UnknownDescriptor { line, .. }
            | CorpusError::GenderViolation { line, .. }
            | CorpusError::CrossGenderPair { line, .. }
            | CorpusError::SelfPair { line, .. }
            | CorpusError::DescriptorCountViolation { line, .. }
            | CorpusError::DuplicateTriple { line, .. }
            | CorpusError::ContradictoryTriple { line, .. }
            | CorpusError::DuplicateSpeaker { line, .. }
            | CorpusError::DuplicateUtterance { line, .. }
            | CorpusError::EmptyUtterances { line, .. }
            | CorpusError::UnknownGender { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// Iterates `(line_number, trimmed_line)` over non-blank, non-comment lines.
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
}
