use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::split::{EvalCell, SplitPlan};
use super::{ProtocolError, Track};
use crate::corpus::{AnnotationSet, Descriptor, Gender, SpeakerId, UtteranceId};
use crate::report::ValidationReport;
use crate::rng::named_rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialItem {
    pub trial_id: String,
    /// Plays the role of the first (reference) utterance.
    pub utterance_first: UtteranceId,
    /// Hypothesized to be the stronger one in `descriptor`.
    pub utterance_second: UtteranceId,
    pub descriptor: Descriptor,
    pub label: bool,
}

impl TrialItem {
    /// Cell key and gender encoded in the trial id
    /// (`{track}-{gender}-{descriptor}-{pairIndex}-{serial}`).
    pub fn cell_key(&self) -> Option<&str> {
        self.trial_id.rsplit_once('-').map(|(cell, _)| cell)
    }

    pub fn gender(&self) -> Option<Gender> {
        gender_from_trial_id(&self.trial_id)
    }
}

/// Gender encoded in a generated trial id (`<track>-<gender>-...`).
pub fn gender_from_trial_id(trial_id: &str) -> Option<Gender> {
    let mut parts = trial_id.splitn(3, '-');
    parts.next()?;
    Gender::parse(parts.next()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialList {
    pub items: Vec<TrialItem>,
    pub track: Track,
    /// Digest of the split plan the trials were drawn from.
    pub split_ref: String,
    pub generation_seed: u64,
    /// Free-form provenance carried through the trial files (e.g. config digest).
    pub extra: BTreeMap<String, String>,
}

/// Draws the trial list for every evaluation cell of `split`.
///
/// Each cell owns a generator derived from `(seed, cell identity)`, so cells
/// are independent of one another and of iteration order. Within a cell the
/// positive and negative items are shuffled together before serials are
/// assigned, so serial order carries no label information.
pub fn generate_trials(
    split: &SplitPlan,
    annotations: &AnnotationSet,
    seed: u64,
) -> Result<TrialList, ProtocolError> {
    let config = &split.config;
    let e = config.eval_utterances_per_speaker;
    let need = |s: &SpeakerId| -> Result<&Vec<UtteranceId>, ProtocolError> {
        let utts = split.eval_utterances.get(s).map(Vec::as_slice).unwrap_or(&[]);
        if utts.len() < e {
            return Err(ProtocolError::InsufficientUtterances {
                speaker: s.clone(),
                needed: e,
                available: utts.len(),
            });
        }
        Ok(&split.eval_utterances[s])
    };
    let annotated: HashSet<(&SpeakerId, &SpeakerId, &Descriptor)> = annotations
        .pairs()
        .iter()
        .flat_map(|p| p.descriptors.iter().map(move |d| (&p.weaker, &p.stronger, d)))
        .collect();

    let mut items = Vec::new();
    for cell in split.eval_cells() {
        let key = cell.key(split.track);
        let a_utts = need(&cell.weaker)?;
        let b_utts = need(&cell.stronger)?;
        let mut rng = named_rng(
            seed,
            &[
                "trials",
                split.track.as_str(),
                cell.weaker.as_str(),
                cell.stronger.as_str(),
                cell.descriptor.as_str(),
            ],
        );

        let mut positives: Vec<(UtteranceId, UtteranceId)> = a_utts
            .iter()
            .flat_map(|a| b_utts.iter().map(move |b| (a.clone(), b.clone())))
            .collect();
        if config.positives_per_cell > positives.len() {
            return Err(ProtocolError::Config(format!(
                "cell {key}: {} positives requested, {} ordered utterance pairs available",
                config.positives_per_cell,
                positives.len()
            )));
        }
        let (chosen, _) = positives.partial_shuffle(&mut rng, config.positives_per_cell);
        let mut cell_items: Vec<(UtteranceId, UtteranceId, bool)> =
            chosen.iter().map(|(a, b)| (a.clone(), b.clone(), true)).collect();

        let mut reversed: Vec<(UtteranceId, UtteranceId)> = b_utts
            .iter()
            .flat_map(|b| a_utts.iter().map(move |a| (b.clone(), a.clone())))
            .collect();
        let from_reversal = config.negatives_per_cell.min(reversed.len());
        let (chosen, _) = reversed.partial_shuffle(&mut rng, from_reversal);
        cell_items.extend(chosen.iter().map(|(b, a)| (b.clone(), a.clone(), false)));

        let missing = config.negatives_per_cell - from_reversal;
        if missing > 0 {
            let mut distractors = distractor_pool(split, &cell, &annotated, a_utts);
            if distractors.len() < missing {
                return Err(ProtocolError::NegativePoolExhausted {
                    cell: key,
                    needed: config.negatives_per_cell,
                    available: from_reversal + distractors.len(),
                });
            }
            let (chosen, _) = distractors.partial_shuffle(&mut rng, missing);
            cell_items.extend(chosen.iter().map(|(a, c)| (a.clone(), c.clone(), false)));
        }

        cell_items.shuffle(&mut rng);
        for (serial, (first, second, label)) in cell_items.into_iter().enumerate() {
            items.push(TrialItem {
                trial_id: format!("{key}-{serial:03}"),
                utterance_first: first,
                utterance_second: second,
                descriptor: cell.descriptor.clone(),
                label,
            });
        }
    }

    Ok(TrialList {
        items,
        track: split.track,
        split_ref: split.digest(),
        generation_seed: seed,
        extra: BTreeMap::new(),
    })
}

/// Negative top-up: `<a, c>` with C a same-gender evaluation speaker that has
/// no annotation against A in the cell's descriptor (either direction).
fn distractor_pool(
    split: &SplitPlan,
    cell: &EvalCell,
    annotated: &HashSet<(&SpeakerId, &SpeakerId, &Descriptor)>,
    a_utts: &[UtteranceId],
) -> Vec<(UtteranceId, UtteranceId)> {
    let mut pool = Vec::new();
    for (c, c_utts) in &split.eval_utterances {
        if c == &cell.weaker || c == &cell.stronger || split.genders.get(c) != Some(&cell.gender) {
            continue;
        }
        let d = &cell.descriptor;
        if annotated.contains(&(&cell.weaker, c, d)) || annotated.contains(&(c, &cell.weaker, d)) {
            continue;
        }
        for a in a_utts {
            for cu in c_utts {
                pool.push((a.clone(), cu.clone()));
            }
        }
    }
    pool
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum TrialIssue {
    CountViolation {
        cell: String,
        positives: usize,
        negatives: usize,
        expected_positives: usize,
        expected_negatives: usize,
    },
    UnknownCell { trial_id: String },
    NotEvalUtterance { trial_id: String, utterance: UtteranceId },
    SameSpeaker { trial_id: String, speaker: SpeakerId },
    DuplicateTrialId { trial_id: String },
    /// A positive item whose utterances are not `<weaker, stronger>` of its cell.
    OrientationMismatch { trial_id: String },
    DescriptorMismatch { trial_id: String },
}

impl fmt::Display for TrialIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrialIssue::CountViolation {
                cell,
                positives,
                negatives,
                expected_positives,
                expected_negatives,
            } => write!(
                f,
                "count violation in cell {cell}: {positives}/{negatives} (expected {expected_positives}/{expected_negatives})"
            ),
            TrialIssue::UnknownCell { trial_id } => {
                write!(f, "trial {trial_id}: cell not part of the split")
            }
            TrialIssue::NotEvalUtterance { trial_id, utterance } => write!(
                f,
                "trial {trial_id}: utterance {utterance} is not an evaluation-phase utterance"
            ),
            TrialIssue::SameSpeaker { trial_id, speaker } => {
                write!(f, "trial {trial_id}: both utterances belong to {speaker}")
            }
            TrialIssue::DuplicateTrialId { trial_id } => write!(f, "duplicate trial id {trial_id}"),
            TrialIssue::OrientationMismatch { trial_id } => {
                write!(f, "trial {trial_id}: positive item not ordered weaker->stronger")
            }
            TrialIssue::DescriptorMismatch { trial_id } => {
                write!(f, "trial {trial_id}: descriptor differs from its cell")
            }
        }
    }
}

/// Checks a trial list against the split it claims to come from.
pub fn audit_trials(trials: &TrialList, split: &SplitPlan) -> ValidationReport<TrialIssue> {
    let mut report = ValidationReport::default();
    let config = &split.config;
    let cells: BTreeMap<String, EvalCell> = split
        .eval_cells()
        .into_iter()
        .map(|c| (c.key(split.track), c))
        .collect();
    let owner: BTreeMap<&UtteranceId, &SpeakerId> = split
        .eval_utterances
        .iter()
        .flat_map(|(s, utts)| utts.iter().map(move |u| (u, s)))
        .collect();

    let mut seen_ids = HashSet::new();
    let mut counts: BTreeMap<&str, (usize, usize)> =
        cells.keys().map(|k| (k.as_str(), (0, 0))).collect();
    for item in &trials.items {
        if !seen_ids.insert(item.trial_id.as_str()) {
            report.push(TrialIssue::DuplicateTrialId {
                trial_id: item.trial_id.clone(),
            });
        }
        let mut owners = [None, None];
        for (slot, utt) in [&item.utterance_first, &item.utterance_second].into_iter().enumerate() {
            match owner.get(utt) {
                Some(s) => owners[slot] = Some(*s),
                None => report.push(TrialIssue::NotEvalUtterance {
                    trial_id: item.trial_id.clone(),
                    utterance: utt.clone(),
                }),
            }
        }
        if let [Some(a), Some(b)] = owners {
            if a == b {
                report.push(TrialIssue::SameSpeaker {
                    trial_id: item.trial_id.clone(),
                    speaker: a.clone(),
                });
            }
        }
        let cell = item.cell_key().and_then(|k| cells.get_key_value(k));
        let Some((key, cell)) = cell else {
            report.push(TrialIssue::UnknownCell {
                trial_id: item.trial_id.clone(),
            });
            continue;
        };
        if item.descriptor != cell.descriptor {
            report.push(TrialIssue::DescriptorMismatch {
                trial_id: item.trial_id.clone(),
            });
        }
        if item.label && owners != [Some(&cell.weaker), Some(&cell.stronger)] {
            report.push(TrialIssue::OrientationMismatch {
                trial_id: item.trial_id.clone(),
            });
        }
        let tally = counts.get_mut(key.as_str()).expect("cell tallied");
        if item.label {
            tally.0 += 1;
        } else {
            tally.1 += 1;
        }
    }
    for (cell, (pos, neg)) in counts {
        if pos != config.positives_per_cell || neg != config.negatives_per_cell {
            report.push(TrialIssue::CountViolation {
                cell: cell.to_string(),
                positives: pos,
                negatives: neg,
                expected_positives: config.positives_per_cell,
                expected_negatives: config.negatives_per_cell,
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::super::split::tests::{toy_config, toy_six};
    use super::super::{build_split, write_trial_key};
    use super::*;

    fn one_cell() -> (AnnotationSet, SplitPlan) {
        let set = toy_six();
        let plan = build_split(&set, &toy_config(&["bright"])).unwrap();
        (set, plan)
    }

    #[test]
    fn one_cell_yields_four_hundred_items() {
        let (set, plan) = one_cell();
        let trials = generate_trials(&plan, &set, 7).unwrap();
        assert_eq!(trials.items.len(), 400);
        assert_eq!(trials.items.iter().filter(|t| t.label).count(), 100);
        assert!(audit_trials(&trials, &plan).is_empty());
        assert_eq!(trials.items[0].gender(), Some(Gender::Female));
        assert!(trials.items[0].trial_id.starts_with("unseen-female-bright-0000-"));
    }

    #[test]
    fn positives_are_distinct_members_of_the_full_product() {
        let (set, plan) = one_cell();
        let a = &plan.eval_utterances[&SpeakerId::new("f5")];
        let b = &plan.eval_utterances[&SpeakerId::new("f6")];
        let mut pool = BTreeSet::new();
        for x in a {
            for y in b {
                pool.insert((x.clone(), y.clone()));
            }
        }
        assert_eq!(pool.len(), 400);
        let trials = generate_trials(&plan, &set, 7).unwrap();
        let positives: BTreeSet<_> = trials
            .items
            .iter()
            .filter(|t| t.label)
            .map(|t| (t.utterance_first.clone(), t.utterance_second.clone()))
            .collect();
        assert_eq!(positives.len(), 100);
        assert!(positives.is_subset(&pool));
        // Reversal soundness: reversed positives never appear as positives.
        for t in trials.items.iter().filter(|t| !t.label) {
            assert!(pool.contains(&(t.utterance_second.clone(), t.utterance_first.clone())));
        }
    }

    #[test]
    fn generation_is_byte_identical_for_fixed_seed() {
        let (set, plan) = one_cell();
        let render = |seed| {
            let mut buf = Vec::new();
            write_trial_key(&generate_trials(&plan, &set, seed).unwrap(), &mut buf).unwrap();
            buf
        };
        assert_eq!(render(11), render(11));
        assert_ne!(render(11), render(12));
    }

    #[test]
    fn audit_names_flipped_cell_and_injected_utterance() {
        let (set, plan) = one_cell();
        let mut trials = generate_trials(&plan, &set, 7).unwrap();
        let flip = trials.items.iter().position(|t| !t.label).unwrap();
        trials.items[flip].label = true;
        let report = audit_trials(&trials, &plan);
        assert!(report.issues.iter().any(|i| matches!(
            i,
            TrialIssue::CountViolation { cell, positives: 101, negatives: 299, .. }
                if cell == "unseen-female-bright-0000"
        )));

        let mut trials = generate_trials(&plan, &set, 7).unwrap();
        let train_utt = plan.train_utterances[&SpeakerId::new("f1")][0].clone();
        trials.items[5].utterance_first = train_utt.clone();
        let id = trials.items[5].trial_id.clone();
        let report = audit_trials(&trials, &plan);
        assert!(report.issues.contains(&TrialIssue::NotEvalUtterance {
            trial_id: id,
            utterance: train_utt
        }));

        let mut trials = generate_trials(&plan, &set, 7).unwrap();
        let dup = trials.items[0].clone();
        trials.items.push(dup);
        assert!(audit_trials(&trials, &plan)
            .issues
            .iter()
            .any(|i| matches!(i, TrialIssue::DuplicateTrialId { .. })));
    }

    #[test]
    fn negatives_beyond_reversals_use_distractors() {
        let set = toy_six();
        let mut config = toy_config(&["bright"]);
        config.eval_speakers = Some(["f4".into(), "f5".into(), "f6".into()].into());
        config.train_speakers.insert(Gender::Female, 3);
        config.negatives_per_cell = 500;
        let plan = build_split(&set, &config).unwrap();
        let trials = generate_trials(&plan, &set, 1).unwrap();
        let negatives: Vec<_> = trials.items.iter().filter(|t| !t.label).collect();
        assert_eq!(negatives.len(), 500);
        // f4 has no bright annotation against f5, so it is the only distractor.
        let f4_items = negatives
            .iter()
            .filter(|t| t.utterance_second.as_str().starts_with("f4_"))
            .count();
        assert_eq!(f4_items, 100);
        assert!(audit_trials(&trials, &plan).is_empty());

        config.negatives_per_cell = 801;
        let plan = build_split(&set, &config).unwrap();
        assert!(matches!(
            generate_trials(&plan, &set, 1),
            Err(ProtocolError::NegativePoolExhausted { needed: 801, available: 800, .. })
        ));
    }

    #[test]
    fn cells_are_independent_of_each_other() {
        let set = toy_six();
        let plan_one = build_split(&set, &toy_config(&["bright"])).unwrap();
        let plan_two = build_split(&set, &toy_config(&["bright", "thin"])).unwrap();
        let a = generate_trials(&plan_one, &set, 5).unwrap();
        let b = generate_trials(&plan_two, &set, 5).unwrap();
        assert_eq!(b.items.len(), 800);
        assert_eq!(&b.items[..400], &a.items[..]);
    }
}
