//! Deterministic stand-in for the full annotated corpus.
//!
//! The generated set has the published shape (101 speakers, 6,038 annotated
//! ordered pairs, 1 to 3 descriptors per pair, gender-exclusive descriptors
//! only on their gender) and a mention distribution proportional to the
//! reference percentages of the default vocabulary. Pair orientations follow
//! a latent per-speaker intensity, so no triple contradicts another.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    default_vocabulary, AnnotationSet, Descriptor, Gender, OrderedPairAnnotation, SpeakerId,
    SpeakerInventory, SpeakerRecord, UtteranceId,
};
use crate::rng::named_rng;

pub const FIXTURE_MALE_SPEAKERS: usize = 40;
pub const FIXTURE_FEMALE_SPEAKERS: usize = 61;
pub const FIXTURE_PAIRS: usize = 6038;
pub const FIXTURE_MENTIONS: usize = 9000;
pub const FIXTURE_UTTERANCES_PER_SPEAKER: usize = 48;

pub fn synthesize_reference_corpus(seed: u64) -> AnnotationSet {
    let vocab = default_vocabulary();
    let mut rng = named_rng(seed, &["fixture", "speakers"]);

    let total = FIXTURE_MALE_SPEAKERS + FIXTURE_FEMALE_SPEAKERS;
    let mut genders: Vec<Gender> = (0..total)
        .map(|i| if i < FIXTURE_MALE_SPEAKERS { Gender::Male } else { Gender::Female })
        .collect();
    genders.shuffle(&mut rng);
    let records: Vec<SpeakerRecord> = genders
        .iter()
        .enumerate()
        .map(|(i, &gender)| {
            let id = format!("p{:03}", i + 1);
            SpeakerRecord {
                utterance_ids: (1..=FIXTURE_UTTERANCES_PER_SPEAKER)
                    .map(|u| UtteranceId::new(format!("{id}_{u:03}")))
                    .collect(),
                speaker_id: SpeakerId::new(id),
                gender,
            }
        })
        .collect();

    let by_gender = |g: Gender| -> Vec<SpeakerId> {
        records
            .iter()
            .filter(|r| r.gender == g)
            .map(|r| r.speaker_id.clone())
            .collect()
    };
    let males = by_gender(Gender::Male);
    let females = by_gender(Gender::Female);
    let ordered = |n: usize| (n * (n - 1)) as f64;
    let male_share = ordered(males.len()) / (ordered(males.len()) + ordered(females.len()));

    // Mention quota per (gender, descriptor), proportional to the reference
    // column renormalized to the fixed mention total.
    let quotas = largest_remainder(
        &vocab
            .entries()
            .iter()
            .map(|e| e.reference_percentage)
            .collect::<Vec<_>>(),
        FIXTURE_MENTIONS,
    );
    let mut mentions: Vec<(SpeakerId, SpeakerId, Descriptor)> = Vec::new();
    for (entry, &quota) in vocab.entries().iter().zip(&quotas) {
        let male_quota = if !entry.restriction.allows(Gender::Female) {
            quota
        } else if !entry.restriction.allows(Gender::Male) {
            0
        } else {
            (quota as f64 * male_share).round() as usize
        };
        for (speakers, n, g) in [
            (&males, male_quota, Gender::Male),
            (&females, quota - male_quota, Gender::Female),
        ] {
            if n == 0 {
                continue;
            }
            let mut rng = named_rng(seed, &["fixture", entry.name.as_str(), g.as_str()]);
            let intensity: Vec<f64> = speakers.iter().map(|_| rng.random()).collect();
            let mut candidates = Vec::new();
            for i in 0..speakers.len() {
                for j in (i + 1)..speakers.len() {
                    let (w, s) = if intensity[i] < intensity[j] { (i, j) } else { (j, i) };
                    candidates.push((w, s));
                }
            }
            candidates.shuffle(&mut rng);
            assert!(n <= candidates.len(), "fixture quota exceeds available pairs");
            for &(w, s) in &candidates[..n] {
                mentions.push((speakers[w].clone(), speakers[s].clone(), entry.name.clone()));
            }
        }
    }

    // Group mentions per ordered pair, then split groups into rows of at most
    // three descriptors until the row count reaches the target.
    let mut groups: BTreeMap<(SpeakerId, SpeakerId), Vec<Descriptor>> = BTreeMap::new();
    for (w, s, d) in mentions {
        groups.entry((w, s)).or_default().push(d);
    }
    let mut layouts: Vec<((SpeakerId, SpeakerId), Vec<Descriptor>, Vec<usize>)> = groups
        .into_iter()
        .map(|(key, mut ds)| {
            ds.sort();
            let k = ds.len();
            let rows = k.div_ceil(3);
            let sizes = (0..rows).map(|r| k / rows + usize::from(r < k % rows)).collect();
            (key, ds, sizes)
        })
        .collect();
    let mut row_count: usize = layouts.iter().map(|l| l.2.len()).sum();
    assert!(row_count <= FIXTURE_PAIRS, "fixture cannot reach the row target");
    let mut order: Vec<usize> = (0..layouts.len()).collect();
    order.shuffle(&mut named_rng(seed, &["fixture", "split"]));
    'outer: while row_count < FIXTURE_PAIRS {
        let mut progressed = false;
        for &g in &order {
            let sizes = &mut layouts[g].2;
            if let Some(pos) = sizes.iter().position(|&s| s >= 2) {
                sizes[pos] -= 1;
                sizes.push(1);
                row_count += 1;
                progressed = true;
                if row_count == FIXTURE_PAIRS {
                    break 'outer;
                }
            }
        }
        assert!(progressed, "fixture mention total below the row target");
    }

    let mut pairs = Vec::with_capacity(FIXTURE_PAIRS);
    for ((w, s), ds, sizes) in layouts {
        let mut it = ds.into_iter();
        for size in sizes {
            pairs.push(OrderedPairAnnotation {
                weaker: w.clone(),
                stronger: s.clone(),
                descriptors: it.by_ref().take(size).collect(),
            });
        }
    }
    pairs.shuffle(&mut named_rng(seed, &["fixture", "rows"]));

    let inventory = SpeakerInventory::new(records).expect("fixture inventory is valid");
    AnnotationSet::new(inventory, pairs, vocab).expect("fixture annotations are valid")
}

/// Small random corpus for protocol and pipeline checks: `per_gender`
/// speakers of each gender with `utterances` utterances each. Every unordered
/// same-gender speaker pair is annotated with probability `density`, oriented
/// by hidden per-speaker intensities so annotations never contradict.
pub fn random_toy_corpus(
    seed: u64,
    per_gender: usize,
    utterances: usize,
    density: f64,
) -> AnnotationSet {
    let vocab = default_vocabulary();
    let mut rng = named_rng(seed, &["toy"]);
    let mut records = Vec::new();
    let mut pairs = Vec::new();
    for gender in Gender::ALL {
        let admissible = vocab.for_gender(gender);
        let prefix = &gender.as_str()[..1];
        let ids: Vec<SpeakerId> = (1..=per_gender)
            .map(|i| SpeakerId::new(format!("{prefix}{i:02}")))
            .collect();
        let intensity: Vec<Vec<f64>> = ids
            .iter()
            .map(|_| admissible.iter().map(|_| rng.random()).collect())
            .collect();
        for id in &ids {
            records.push(SpeakerRecord {
                speaker_id: id.clone(),
                gender,
                utterance_ids: (1..=utterances)
                    .map(|u| UtteranceId::new(format!("{id}_{u:03}")))
                    .collect(),
            });
        }
        for i in 0..ids.len() {
            for j in (i + 1)..ids.len() {
                if !rng.random_bool(density) {
                    continue;
                }
                let (w, s) = if rng.random_bool(0.5) { (i, j) } else { (j, i) };
                let mut stronger_in: Vec<usize> = (0..admissible.len())
                    .filter(|&v| intensity[w][v] < intensity[s][v])
                    .collect();
                if stronger_in.is_empty() {
                    continue;
                }
                stronger_in.shuffle(&mut rng);
                let k = rng.random_range(1..=3).min(stronger_in.len());
                pairs.push(OrderedPairAnnotation {
                    weaker: ids[w].clone(),
                    stronger: ids[s].clone(),
                    descriptors: stronger_in[..k].iter().map(|&v| admissible[v].clone()).collect(),
                });
            }
        }
    }
    let inventory = SpeakerInventory::new(records).expect("toy inventory is valid");
    AnnotationSet::new(inventory, pairs, vocab).expect("toy annotations are valid")
}

/// Apportions `total` units proportionally to `weights`, exactly.
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = total - quotas.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        quotas[i] += 1;
    }
    quotas
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_has_published_shape() {
        let set = synthesize_reference_corpus(2025);
        assert_eq!(set.speakers().len(), 101);
        assert_eq!(set.pairs().len(), FIXTURE_PAIRS);
        assert_eq!(set.mention_count(), FIXTURE_MENTIONS);
        assert!(set.pairs().iter().all(|p| (1..=3).contains(&p.descriptors.len())));
    }

    #[test]
    fn apportionment_is_exact() {
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[2.0, 1.0], 9), vec![6, 3]);
    }

    #[test]
    fn fixture_is_deterministic() {
        assert_eq!(synthesize_reference_corpus(3), synthesize_reference_corpus(3));
    }
}
