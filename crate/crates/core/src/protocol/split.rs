use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ProtocolError, SplitConfig, Track};
use crate::corpus::{AnnotationSet, Descriptor, Gender, OrderedPairAnnotation, SpeakerId, UtteranceId};
use crate::rng::{named_rng, sha256_hex};

/// Train/evaluation partition of an annotation set for one track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub track: Track,
    pub seed: u64,
    pub config: SplitConfig,
    pub train_pairs: Vec<OrderedPairAnnotation>,
    pub eval_pairs: Vec<OrderedPairAnnotation>,
    pub train_utterances: BTreeMap<SpeakerId, Vec<UtteranceId>>,
    pub eval_utterances: BTreeMap<SpeakerId, Vec<UtteranceId>>,
    pub eval_descriptors: BTreeMap<Gender, BTreeSet<Descriptor>>,
    /// Gender of every speaker the plan mentions.
    pub genders: BTreeMap<SpeakerId, Gender>,
}

/// One (ordered speaker pair, descriptor) evaluation cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCell {
    pub pair_index: usize,
    pub gender: Gender,
    pub weaker: SpeakerId,
    pub stronger: SpeakerId,
    pub descriptor: Descriptor,
}

impl EvalCell {
    /// Trial-id prefix: `{track}-{gender}-{descriptor}-{pairIndex}`.
    pub fn key(&self, track: Track) -> String {
        format!(
            "{}-{}-{}-{:04}",
            track, self.gender, self.descriptor, self.pair_index
        )
    }
}

impl SplitPlan {
    pub fn eval_cells(&self) -> Vec<EvalCell> {
        let mut cells = Vec::new();
        for (pair_index, pair) in self.eval_pairs.iter().enumerate() {
            let gender = self.genders[&pair.weaker];
            let wanted = self.eval_descriptors.get(&gender);
            for d in &pair.descriptors {
                if wanted.is_some_and(|w| w.contains(d)) {
                    cells.push(EvalCell {
                        pair_index,
                        gender,
                        weaker: pair.weaker.clone(),
                        stronger: pair.stronger.clone(),
                        descriptor: d.clone(),
                    });
                }
            }
        }
        cells
    }

    pub fn train_speakers(&self) -> BTreeSet<&SpeakerId> {
        self.train_utterances.keys().collect()
    }

    /// Speakers holding evaluation-phase utterances.
    pub fn eval_speakers(&self) -> BTreeSet<&SpeakerId> {
        self.eval_utterances.keys().collect()
    }

    pub fn speakers_in_train_pairs(&self) -> BTreeSet<&SpeakerId> {
        self.train_pairs
            .iter()
            .flat_map(|p| [&p.weaker, &p.stronger])
            .collect()
    }

    pub fn speakers_in_eval_pairs(&self) -> BTreeSet<&SpeakerId> {
        self.eval_pairs
            .iter()
            .flat_map(|p| [&p.weaker, &p.stronger])
            .collect()
    }

    /// Content digest used as the split's identity in downstream artifacts.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("split plan serializes"))
    }
}

fn eval_hits(pair: &OrderedPairAnnotation, wanted: Option<&BTreeSet<Descriptor>>) -> bool {
    wanted.is_some_and(|w| pair.descriptors.iter().any(|d| w.contains(d)))
}

/// Partitions `annotations` for `config.track`. Deterministic for a fixed
/// (annotations, config).
pub fn build_split(
    annotations: &AnnotationSet,
    config: &SplitConfig,
) -> Result<SplitPlan, ProtocolError> {
    let inventory = annotations.speakers();
    let seed = config.seed;
    if config.track == Track::Seen && !(0.0..=1.0).contains(&config.seen_eval_fraction) {
        return Err(ProtocolError::Config(format!(
            "seen_eval_fraction {} outside [0, 1]",
            config.seen_eval_fraction
        )));
    }
    if config.eval_utterances_per_speaker == 0 {
        return Err(ProtocolError::Config(
            "eval_utterances_per_speaker must be positive".into(),
        ));
    }
    for (gender, names) in &config.eval_descriptors {
        for d in names {
            let ok = annotations
                .vocabulary()
                .get(d.as_str())
                .is_some_and(|e| e.restriction.allows(*gender));
            if !ok {
                return Err(ProtocolError::Config(format!(
                    "`{d}` is not a {gender} descriptor of the vocabulary"
                )));
            }
        }
    }
    if let Some(fixed) = &config.eval_speakers {
        if config.track == Track::Seen {
            return Err(ProtocolError::Config(
                "eval_speakers applies to the unseen track only".into(),
            ));
        }
        if let Some(unknown) = fixed.iter().find(|s| !inventory.contains(s)) {
            return Err(ProtocolError::UnknownSpeaker(unknown.clone()));
        }
    }

    // Speaker selection per gender: seeded shuffle, first k train.
    let mut train_speakers: BTreeSet<SpeakerId> = BTreeSet::new();
    let mut eval_side: BTreeSet<SpeakerId> = BTreeSet::new();
    for gender in Gender::ALL {
        let mut candidates: Vec<SpeakerId> = inventory
            .speakers()
            .filter(|r| r.gender == gender)
            .map(|r| r.speaker_id.clone())
            .collect();
        let pinned: BTreeSet<SpeakerId> = config
            .eval_speakers
            .iter()
            .flatten()
            .filter(|s| inventory.gender_of(s) == Some(gender))
            .cloned()
            .collect();
        candidates.retain(|s| !pinned.contains(s));
        candidates.shuffle(&mut named_rng(seed, &["split", "speakers", gender.as_str()]));
        let requested = config.train_speakers.get(&gender).copied().unwrap_or(0);
        if requested > candidates.len() {
            return Err(ProtocolError::InsufficientSpeakers {
                gender,
                requested,
                available: candidates.len(),
            });
        }
        train_speakers.extend(candidates[..requested].iter().cloned());
        if config.track == Track::Unseen {
            if config.eval_speakers.is_some() {
                eval_side.extend(pinned);
            } else {
                eval_side.extend(candidates[requested..].iter().cloned());
            }
        }
    }

    let wanted = |pair: &OrderedPairAnnotation| {
        eval_hits(pair, config.eval_descriptors.get(&annotations.gender_of(pair)))
    };
    let internal = |pair: &OrderedPairAnnotation, set: &BTreeSet<SpeakerId>| {
        set.contains(&pair.weaker) && set.contains(&pair.stronger)
    };

    let (train_pairs, eval_pairs) = match config.track {
        Track::Unseen => {
            let train: Vec<_> = annotations
                .pairs()
                .iter()
                .filter(|p| internal(p, &train_speakers))
                .cloned()
                .collect();
            let eval: Vec<_> = annotations
                .pairs()
                .iter()
                .filter(|p| internal(p, &eval_side) && wanted(p))
                .cloned()
                .collect();
            (train, eval)
        }
        Track::Seen => split_seen_pairs(annotations, config, &train_speakers)?,
    };

    // Every configured descriptor must own at least one evaluation cell.
    for (gender, names) in &config.eval_descriptors {
        for d in names {
            let covered = eval_pairs
                .iter()
                .any(|p| annotations.gender_of(p) == *gender && p.descriptors.contains(d));
            if !covered {
                return Err(ProtocolError::DescriptorUncovered {
                    gender: *gender,
                    descriptor: d.clone(),
                });
            }
        }
    }

    // Utterance phases.
    let e = config.eval_utterances_per_speaker;
    let in_eval_pairs: BTreeSet<SpeakerId> = eval_pairs
        .iter()
        .flat_map(|p| [p.weaker.clone(), p.stronger.clone()])
        .collect();
    let mut train_utterances = BTreeMap::new();
    let mut eval_utterances = BTreeMap::new();
    let shuffled = |s: &SpeakerId| -> Vec<UtteranceId> {
        let mut utts = inventory.get(s).expect("selected speaker exists").utterance_ids.clone();
        utts.shuffle(&mut named_rng(seed, &["split", "utterances", s.as_str()]));
        utts
    };
    let cap = |mut v: Vec<UtteranceId>| {
        if let Some(c) = config.train_utterances_per_speaker {
            v.truncate(c);
        }
        v.sort();
        v
    };
    match config.track {
        Track::Seen => {
            for s in &train_speakers {
                let utts = shuffled(s);
                if in_eval_pairs.contains(s) {
                    if utts.len() <= e {
                        return Err(ProtocolError::InsufficientUtterances {
                            speaker: s.clone(),
                            needed: e + 1,
                            available: utts.len(),
                        });
                    }
                    let mut eval = utts[..e].to_vec();
                    eval.sort();
                    eval_utterances.insert(s.clone(), eval);
                    train_utterances.insert(s.clone(), cap(utts[e..].to_vec()));
                } else {
                    train_utterances.insert(s.clone(), cap(utts));
                }
            }
        }
        Track::Unseen => {
            for s in &train_speakers {
                train_utterances.insert(s.clone(), cap(shuffled(s)));
            }
            for s in &eval_side {
                let utts = shuffled(s);
                if utts.len() < e {
                    if in_eval_pairs.contains(s) {
                        return Err(ProtocolError::InsufficientUtterances {
                            speaker: s.clone(),
                            needed: e,
                            available: utts.len(),
                        });
                    }
                    continue;
                }
                let mut eval = utts[..e].to_vec();
                eval.sort();
                eval_utterances.insert(s.clone(), eval);
            }
        }
    }

    let genders = train_utterances
        .keys()
        .chain(eval_utterances.keys())
        .chain(eval_pairs.iter().flat_map(|p| [&p.weaker, &p.stronger]))
        .map(|s| (s.clone(), inventory.gender_of(s).expect("known speaker")))
        .collect();

    Ok(SplitPlan {
        track: config.track,
        seed,
        config: config.clone(),
        train_pairs,
        eval_pairs,
        train_utterances,
        eval_utterances,
        eval_descriptors: config.eval_descriptors.clone(),
        genders,
    })
}

/// Seen track: hold out whole unordered speaker pairs among the training
/// speakers, so neither orientation of a held-out pair is trained on.
fn split_seen_pairs(
    annotations: &AnnotationSet,
    config: &SplitConfig,
    speakers: &BTreeSet<SpeakerId>,
) -> Result<(Vec<OrderedPairAnnotation>, Vec<OrderedPairAnnotation>), ProtocolError> {
    let key = |p: &OrderedPairAnnotation| {
        if p.weaker < p.stronger {
            (p.weaker.clone(), p.stronger.clone())
        } else {
            (p.stronger.clone(), p.weaker.clone())
        }
    };
    let wanted = |p: &OrderedPairAnnotation| {
        eval_hits(p, config.eval_descriptors.get(&annotations.gender_of(p)))
    };
    let rows: Vec<&OrderedPairAnnotation> = annotations
        .pairs()
        .iter()
        .filter(|p| speakers.contains(&p.weaker) && speakers.contains(&p.stronger))
        .collect();

    let mut eligible: Vec<(SpeakerId, SpeakerId)> = rows
        .iter()
        .filter(|p| wanted(p))
        .map(|p| key(p))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    eligible.shuffle(&mut named_rng(config.seed, &["split", "seen-pairs"]));
    let take = (config.seen_eval_fraction * eligible.len() as f64).ceil() as usize;
    let mut held: BTreeSet<(SpeakerId, SpeakerId)> = eligible[..take].iter().cloned().collect();

    // Coverage top-up, walking the same seeded order.
    for (gender, names) in &config.eval_descriptors {
        for d in names {
            let carries = |k: &(SpeakerId, SpeakerId)| {
                rows.iter().any(|p| {
                    key(p) == *k && annotations.gender_of(p) == *gender && p.descriptors.contains(d)
                })
            };
            if held.iter().any(carries) {
                continue;
            }
            if let Some(k) = eligible.iter().find(|k| carries(k)) {
                held.insert(k.clone());
            }
        }
    }

    let mut train = Vec::new();
    let mut eval = Vec::new();
    for p in rows {
        if held.contains(&key(p)) {
            if wanted(p) {
                eval.push(p.clone());
            }
        } else {
            train.push(p.clone());
        }
    }
    Ok((train, eval))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::fixture::{random_toy_corpus, synthesize_reference_corpus};
    use crate::corpus::{default_vocabulary, parse_annotations, SpeakerInventory, SpeakerRecord};

    pub(crate) fn toy_six() -> AnnotationSet {
        let records = (1..=6)
            .map(|i| SpeakerRecord {
                speaker_id: SpeakerId::new(format!("f{i}")),
                gender: Gender::Female,
                utterance_ids: (1..=25)
                    .map(|u| UtteranceId::new(format!("f{i}_{u:02}")))
                    .collect(),
            })
            .collect();
        let inv = SpeakerInventory::new(records).unwrap();
        parse_annotations(
            "f1\tf2\tbright\nf5\tf6\tbright,low\nf2\tf5\tbright\nf6\tf5\tthin\n",
            &default_vocabulary(),
            &inv,
        )
        .unwrap()
    }

    pub(crate) fn toy_config(descriptors: &[&str]) -> SplitConfig {
        SplitConfig {
            eval_descriptors: BTreeMap::from([(
                Gender::Female,
                descriptors.iter().map(Descriptor::new).collect(),
            )]),
            train_speakers: BTreeMap::from([(Gender::Female, 4)]),
            eval_speakers: Some(["f5".into(), "f6".into()].into()),
            ..SplitConfig::default()
        }
    }

    #[test]
    fn unseen_toy_only_internal_eval_pairs_are_eligible() {
        let set = toy_six();
        // Hand enumeration with eval speakers {f5, f6} and eval descriptor
        // {bright}: row 2 (f5->f6) is internal and carries bright; row 4
        // (f6->f5) is internal but only thin; row 3 (f2->f5) crosses the
        // partition; row 1 (f1->f2) is internal to training speakers.
        let plan = build_split(&set, &toy_config(&["bright"])).unwrap();
        assert_eq!(plan.eval_pairs, vec![set.pairs()[1].clone()]);
        assert_eq!(plan.train_pairs, vec![set.pairs()[0].clone()]);
        let cells = plan.eval_cells();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].descriptor.as_str(), "bright");

        let plan = build_split(&set, &toy_config(&["bright", "thin"])).unwrap();
        assert_eq!(
            plan.eval_pairs,
            vec![set.pairs()[1].clone(), set.pairs()[3].clone()]
        );
        assert_eq!(plan.eval_cells().len(), 2);
    }

    #[test]
    fn unseen_speaker_sets_are_disjoint() {
        let set = random_toy_corpus(1, 12, 24, 0.9);
        let config = SplitConfig {
            eval_descriptors: BTreeMap::from([
                (Gender::Male, [Descriptor::new("bright")].into()),
                (Gender::Female, [Descriptor::new("bright")].into()),
            ]),
            train_speakers: BTreeMap::from([(Gender::Male, 6), (Gender::Female, 6)]),
            ..SplitConfig::default()
        };
        let plan = build_split(&set, &config).unwrap();
        let train = plan.speakers_in_train_pairs();
        assert!(plan.speakers_in_eval_pairs().is_disjoint(&train));
        assert!(plan.train_speakers().is_disjoint(&plan.eval_speakers()));
        assert_eq!(plan.train_speakers().len(), 12);
    }

    #[test]
    fn seen_track_keeps_utterances_and_pairs_apart() {
        let set = random_toy_corpus(2, 10, 30, 0.9);
        let config = SplitConfig {
            track: Track::Seen,
            eval_descriptors: BTreeMap::from([
                (Gender::Male, [Descriptor::new("low")].into()),
                (Gender::Female, [Descriptor::new("thin")].into()),
            ]),
            train_speakers: BTreeMap::from([(Gender::Male, 10), (Gender::Female, 10)]),
            ..SplitConfig::default()
        };
        let plan = build_split(&set, &config).unwrap();
        assert!(!plan.eval_pairs.is_empty());
        for (s, eval) in &plan.eval_utterances {
            let train = &plan.train_utterances[s];
            assert!(eval.iter().all(|u| !train.contains(u)));
            assert_eq!(eval.len(), 20);
        }
        let train_pairs: BTreeSet<_> =
            plan.train_pairs.iter().map(|p| (&p.weaker, &p.stronger)).collect();
        for p in &plan.eval_pairs {
            assert!(!train_pairs.contains(&(&p.weaker, &p.stronger)));
            assert!(!train_pairs.contains(&(&p.stronger, &p.weaker)));
        }
        assert!(plan.speakers_in_eval_pairs().is_subset(&plan.train_speakers()));
    }

    #[test]
    fn error_classes() {
        let set = toy_six();
        let mut c = toy_config(&["bright"]);
        c.eval_speakers = None;
        c.train_speakers.insert(Gender::Female, 7);
        assert!(matches!(
            build_split(&set, &c),
            Err(ProtocolError::InsufficientSpeakers { requested: 7, available: 6, .. })
        ));

        assert!(matches!(
            build_split(&set, &toy_config(&["slim"])),
            Err(ProtocolError::DescriptorUncovered { .. })
        ));

        let mut c = toy_config(&["bright"]);
        c.eval_utterances_per_speaker = 26;
        assert!(matches!(
            build_split(&set, &c),
            Err(ProtocolError::InsufficientUtterances { needed: 26, .. })
        ));

        let mut c = toy_config(&["bright"]);
        c.track = Track::Seen;
        c.eval_speakers = None;
        c.train_speakers.insert(Gender::Female, 6);
        c.eval_utterances_per_speaker = 25;
        assert!(matches!(
            build_split(&set, &c),
            Err(ProtocolError::InsufficientUtterances { needed: 26, available: 25, .. })
        ));

        let mut c = toy_config(&["husky"]);
        c.eval_speakers = None;
        assert!(matches!(build_split(&set, &c), Err(ProtocolError::Config(_))));
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let set = random_toy_corpus(3, 12, 24, 0.7);
        let config = SplitConfig {
            eval_descriptors: BTreeMap::from([(Gender::Female, [Descriptor::new("bright")].into())]),
            train_speakers: BTreeMap::from([(Gender::Male, 6), (Gender::Female, 6)]),
            ..SplitConfig::default()
        };
        let a = build_split(&set, &config).unwrap();
        let b = build_split(&set, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        let other = build_split(&set, &SplitConfig { seed: 99, ..config }).unwrap();
        assert_ne!(a.train_utterances, other.train_utterances);
    }

    #[test]
    fn reference_fixture_seen_track_uses_challenge_counts() {
        let set = synthesize_reference_corpus(2025);
        let config = SplitConfig {
            track: Track::Seen,
            ..SplitConfig::default()
        };
        let plan = build_split(&set, &config).unwrap();
        let count = |g| {
            plan.train_speakers()
                .iter()
                .filter(|s| plan.genders[**s] == g)
                .count()
        };
        assert_eq!(count(Gender::Male), 29);
        assert_eq!(count(Gender::Female), 49);
        for cell in plan.eval_cells() {
            assert!(config.eval_descriptors[&cell.gender].contains(&cell.descriptor));
        }
        let covered: BTreeSet<_> = plan
            .eval_cells()
            .into_iter()
            .map(|c| (c.gender, c.descriptor))
            .collect();
        assert_eq!(covered.len(), 10);
    }
}
