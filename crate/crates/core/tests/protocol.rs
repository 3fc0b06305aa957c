use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use vtad::corpus::fixture::random_toy_corpus;
use vtad::corpus::Gender;
use vtad::protocol::{
    build_split, generate_trials, parse_trial_key, parse_trial_refs, write_participant_trials, write_trial_key,
    SplitConfig, Track,
};

fn toy_config(track: Track, seed: u64) -> SplitConfig {
    SplitConfig {
        track,
        seed,
        eval_descriptors: BTreeMap::from([
            (Gender::Male, ["bright".into()].into()),
            (Gender::Female, ["thin".into()].into()),
        ]),
        train_speakers: match track {
            Track::Unseen => BTreeMap::from([(Gender::Male, 6), (Gender::Female, 6)]),
            Track::Seen => BTreeMap::from([(Gender::Male, 12), (Gender::Female, 12)]),
        },
        eval_utterances_per_speaker: 6,
        positives_per_cell: 10,
        negatives_per_cell: 30,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trials_are_well_formed(corpus_seed in 0u64..10_000, seed in 0u64..1000, seen in any::<bool>()) {
        let set = random_toy_corpus(corpus_seed, 12, 16, 0.95);
        let track = if seen { Track::Seen } else { Track::Unseen };
        let config = toy_config(track, seed);
        let Ok(plan) = build_split(&set, &config) else { return Ok(()) };
        prop_assert_eq!(&build_split(&set, &config).unwrap(), &plan);

        let trials = generate_trials(&plan, &set, seed).unwrap();
        let ids: BTreeSet<&str> = trials.items.iter().map(|t| t.trial_id.as_str()).collect();
        prop_assert_eq!(ids.len(), trials.items.len());

        let eval_utts: BTreeSet<_> = plan.eval_utterances.values().flatten().collect();
        for t in &trials.items {
            prop_assert!(eval_utts.contains(&t.utterance_first));
            prop_assert!(eval_utts.contains(&t.utterance_second));
            prop_assert_ne!(&t.utterance_first, &t.utterance_second);
            let g = t.gender().unwrap();
            prop_assert!(plan.eval_descriptors[&g].contains(&t.descriptor));
        }
        let mut per_cell: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for t in &trials.items {
            let c = per_cell.entry(t.cell_key().unwrap()).or_default();
            if t.label { c.0 += 1 } else { c.1 += 1 }
        }
        prop_assert!(per_cell.values().all(|&c| c == (10, 30)));

        let mut key = Vec::new();
        write_trial_key(&trials, &mut key).unwrap();
        prop_assert_eq!(&parse_trial_key(std::str::from_utf8(&key).unwrap()).unwrap(), &trials);

        let mut part = Vec::new();
        write_participant_trials(&trials, &mut part).unwrap();
        let part = String::from_utf8(part).unwrap();
        prop_assert!(part.lines().filter(|l| !l.starts_with('#')).all(|l| l.split('\t').count() == 4));
        let (refs, meta) = parse_trial_refs(&part).unwrap();
        prop_assert_eq!(refs.len(), trials.items.len());
        prop_assert_eq!(meta.get("track").map(String::as_str), Some(track.as_str()));
    }
}

#[test]
fn generation_seed_changes_serial_order_only_within_cells() {
    let (set, plan) = (0..50)
        .find_map(|s| {
            let set = random_toy_corpus(s, 12, 16, 0.95);
            let plan = build_split(&set, &toy_config(Track::Unseen, 1)).ok()?;
            Some((set, plan))
        })
        .expect("some toy corpus covers the evaluation descriptors");
    let a = generate_trials(&plan, &set, 1).unwrap();
    let b = generate_trials(&plan, &set, 2).unwrap();
    assert_ne!(a.items, b.items);
    let cells = |t: &vtad::protocol::TrialList| -> BTreeSet<String> {
        t.items.iter().map(|i| i.cell_key().unwrap().to_string()).collect()
    };
    assert_eq!(cells(&a), cells(&b));
}
