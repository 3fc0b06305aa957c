//! Seen/unseen evaluation splits and deterministic trial lists.
//!
//! An evaluation cell is one annotated ordered speaker pair `(A, B)` together
//! with one evaluation descriptor `v`. Every cell yields a fixed number of
//! positive trials `<a, b>` (utterance of A first) and negative trials built
//! from reversed pairs `<b, a>`, topped up from distractor speakers only when
//! more negatives are requested than reversals exist.

mod io;
mod split;
mod trials;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Descriptor, Gender, SpeakerId, UtteranceId};

pub use io::{parse_trial_key, parse_trial_refs, write_participant_trials, write_trial_key, TrialRef};
pub use split::{build_split, EvalCell, SplitPlan};
pub use trials::{
    audit_trials, gender_from_trial_id, generate_trials, TrialIssue, TrialItem, TrialList,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Track {
    Seen,
    Unseen,
}

impl Track {
    pub fn as_str(self) -> &'static str {
        match self {
            Track::Seen => "seen",
            Track::Unseen => "unseen",
        }
    }
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Track {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "seen" => Ok(Track::Seen),
            "unseen" => Ok(Track::Unseen),
            other => Err(ProtocolError::Config(format!("unknown track `{other}`"))),
        }
    }
}

/// Split and trial-generation parameters. Defaults reproduce the challenge
/// protocol: 29 male / 49 female training speakers, five evaluation
/// descriptors per gender, 20 evaluation utterances per speaker, 100 positive
/// and 300 negative trials per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub track: Track,
    pub seed: u64,
    pub eval_descriptors: BTreeMap<Gender, BTreeSet<Descriptor>>,
    pub train_speakers: BTreeMap<Gender, usize>,
    pub eval_utterances_per_speaker: usize,
    /// Cap on training utterances per speaker; `None` keeps all remaining.
    pub train_utterances_per_speaker: Option<usize>,
    /// Seen track: share of eligible unordered speaker pairs held out for
    /// evaluation.
    pub seen_eval_fraction: f64,
    /// Unseen track: pin the evaluation speakers instead of drawing them.
    pub eval_speakers: Option<BTreeSet<SpeakerId>>,
    pub positives_per_cell: usize,
    pub negatives_per_cell: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let set = |names: &[&str]| names.iter().map(Descriptor::new).collect();
        Self {
            track: Track::Unseen,
            seed: 2025,
            eval_descriptors: BTreeMap::from([
                (Gender::Male, set(&["bright", "thin", "low", "magnetic", "pure"])),
                (Gender::Female, set(&["bright", "thin", "low", "coarse", "slim"])),
            ]),
            train_speakers: BTreeMap::from([(Gender::Male, 29), (Gender::Female, 49)]),
            eval_utterances_per_speaker: 20,
            train_utterances_per_speaker: None,
            seen_eval_fraction: 0.2,
            eval_speakers: None,
            positives_per_cell: 100,
            negatives_per_cell: 300,
        }
    }
}

impl SplitConfig {
    pub fn from_toml(text: &str) -> Result<Self, ProtocolError> {
        toml::from_str(text).map_err(|e| ProtocolError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("split config serializes")
    }

    pub fn eval_descriptors_for(&self, gender: Gender) -> BTreeSet<Descriptor> {
        self.eval_descriptors.get(&gender).cloned().unwrap_or_default()
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("InsufficientSpeakers: {gender} needs {requested} training speakers, {available} available")]
    InsufficientSpeakers {
        gender: Gender,
        requested: usize,
        available: usize,
    },
    #[error("DescriptorUncovered: no {gender} evaluation pair carries `{descriptor}`")]
    DescriptorUncovered { gender: Gender, descriptor: Descriptor },
    #[error("InsufficientUtterances: speaker `{speaker}` has {available} utterances, {needed} needed")]
    InsufficientUtterances {
        speaker: SpeakerId,
        needed: usize,
        available: usize,
    },
    #[error("NegativePoolExhausted: cell {cell} can furnish {available} of {needed} negatives")]
    NegativePoolExhausted {
        cell: String,
        needed: usize,
        available: usize,
    },
    #[error("unknown speaker `{0}` in split configuration")]
    UnknownSpeaker(SpeakerId),
    #[error("utterance `{0}` is not in the inventory")]
    UnknownUtterance(UtteranceId),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("line {line}: malformed trial row: {reason}")]
    MalformedTrial { line: usize, reason: String },
}
