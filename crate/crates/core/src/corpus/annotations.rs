use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{data_lines, CorpusError, Descriptor, DescriptorVocabulary, Gender, SpeakerId, SpeakerInventory};

/// One annotated row: the stronger speaker exceeds the weaker one in every
/// listed descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderedPairAnnotation {
    pub weaker: SpeakerId,
    pub stronger: SpeakerId,
    pub descriptors: BTreeSet<Descriptor>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnnotationData {
    speakers: SpeakerInventory,
    pairs: Vec<OrderedPairAnnotation>,
    vocabulary: DescriptorVocabulary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AnnotationData", into = "AnnotationData")]
pub struct AnnotationSet {
    speakers: SpeakerInventory,
    pairs: Vec<OrderedPairAnnotation>,
    vocabulary: DescriptorVocabulary,
}

impl AnnotationSet {
    /// Validates `pairs` against the inventory and vocabulary. Errors report
    /// the 1-based position of the offending pair.
    pub fn new(
        speakers: SpeakerInventory,
        pairs: Vec<OrderedPairAnnotation>,
        vocabulary: DescriptorVocabulary,
    ) -> Result<Self, CorpusError> {
        let mut checker = TripleChecker::default();
        for (i, pair) in pairs.iter().enumerate() {
            check_pair(pair, i + 1, &speakers, &vocabulary)?;
            checker.admit(pair, i + 1)?;
        }
        Ok(Self {
            speakers,
            pairs,
            vocabulary,
        })
    }

    pub fn speakers(&self) -> &SpeakerInventory {
        &self.speakers
    }

    pub fn pairs(&self) -> &[OrderedPairAnnotation] {
        &self.pairs
    }

    pub fn vocabulary(&self) -> &DescriptorVocabulary {
        &self.vocabulary
    }

    pub fn gender_of(&self, pair: &OrderedPairAnnotation) -> Gender {
        self.speakers
            .gender_of(&pair.weaker)
            .expect("validated pair references known speakers")
    }

    /// Distinct speakers referenced by at least one pair.
    pub fn annotated_speakers(&self) -> BTreeSet<&SpeakerId> {
        self.pairs
            .iter()
            .flat_map(|p| [&p.weaker, &p.stronger])
            .collect()
    }

    pub fn mention_count(&self) -> usize {
        self.pairs.iter().map(|p| p.descriptors.len()).sum()
    }
}

impl TryFrom<AnnotationData> for AnnotationSet {
    type Error = CorpusError;

    fn try_from(d: AnnotationData) -> Result<Self, Self::Error> {
        Self::new(d.speakers, d.pairs, d.vocabulary)
    }
}

impl From<AnnotationSet> for AnnotationData {
    fn from(s: AnnotationSet) -> Self {
        AnnotationData {
            speakers: s.speakers,
            pairs: s.pairs,
            vocabulary: s.vocabulary,
        }
    }
}

fn check_pair(
    pair: &OrderedPairAnnotation,
    line: usize,
    speakers: &SpeakerInventory,
    vocabulary: &DescriptorVocabulary,
) -> Result<(), CorpusError> {
    let gender_of = |id: &SpeakerId| {
        speakers.gender_of(id).ok_or_else(|| CorpusError::UnknownSpeaker {
            line,
            speaker: id.clone(),
        })
    };
    let weaker_gender = gender_of(&pair.weaker)?;
    let stronger_gender = gender_of(&pair.stronger)?;
    if pair.weaker == pair.stronger {
        return Err(CorpusError::SelfPair {
            line,
            speaker: pair.weaker.clone(),
        });
    }
    if weaker_gender != stronger_gender {
        return Err(CorpusError::CrossGenderPair {
            line,
            weaker: pair.weaker.clone(),
            weaker_gender,
            stronger: pair.stronger.clone(),
            stronger_gender,
        });
    }
    let count = pair.descriptors.len();
    if !(1..=3).contains(&count) {
        return Err(CorpusError::DescriptorCountViolation { line, count });
    }
    for d in &pair.descriptors {
        let entry = vocabulary
            .get(d.as_str())
            .ok_or_else(|| CorpusError::UnknownDescriptor {
                line,
                descriptor: d.to_string(),
            })?;
        if !entry.restriction.allows(weaker_gender) {
            return Err(CorpusError::GenderViolation {
                line,
                descriptor: d.clone(),
                gender: weaker_gender,
            });
        }
    }
    Ok(())
}

#[derive(Default)]
struct TripleChecker {
    seen: HashMap<(SpeakerId, SpeakerId, Descriptor), usize>,
}

impl TripleChecker {
    fn admit(&mut self, pair: &OrderedPairAnnotation, line: usize) -> Result<(), CorpusError> {
        for d in &pair.descriptors {
            let reversed = (pair.stronger.clone(), pair.weaker.clone(), d.clone());
            if let Some(&first_line) = self.seen.get(&reversed) {
                return Err(CorpusError::ContradictoryTriple {
                    line,
                    first_line,
                    weaker: pair.weaker.clone(),
                    stronger: pair.stronger.clone(),
                    descriptor: d.clone(),
                });
            }
            let key = (pair.weaker.clone(), pair.stronger.clone(), d.clone());
            if let Some(&first_line) = self.seen.get(&key) {
                return Err(CorpusError::DuplicateTriple {
                    line,
                    first_line,
                    weaker: pair.weaker.clone(),
                    stronger: pair.stronger.clone(),
                    descriptor: d.clone(),
                });
            }
            self.seen.insert(key, line);
        }
        Ok(())
    }
}

/// Parses `weaker<TAB>stronger<TAB>descriptor[,descriptor[,descriptor]]` rows.
/// Blank lines and `#` comments are skipped; row order is preserved.
pub fn parse_annotations(
    text: &str,
    vocabulary: &DescriptorVocabulary,
    speakers: &SpeakerInventory,
) -> Result<AnnotationSet, CorpusError> {
    let mut pairs = Vec::new();
    let mut checker = TripleChecker::default();
    for (line, row) in data_lines(text) {
        let cols: Vec<&str> = row.split('\t').collect();
        if cols.len() != 3 {
            return Err(CorpusError::MalformedRow {
                line,
                reason: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let tokens: Vec<Descriptor> = cols[2]
            .split(',')
            .map(Descriptor::new)
            .filter(|d| !d.as_str().is_empty())
            .collect();
        let descriptors: BTreeSet<Descriptor> = tokens.iter().cloned().collect();
        if descriptors.len() != tokens.len() {
            return Err(CorpusError::MalformedRow {
                line,
                reason: "descriptor repeated within a row".into(),
            });
        }
        let pair = OrderedPairAnnotation {
            weaker: SpeakerId::new(cols[0]),
            stronger: SpeakerId::new(cols[1]),
            descriptors,
        };
        check_pair(&pair, line, speakers, vocabulary)?;
        checker.admit(&pair, line)?;
        pairs.push(pair);
    }
    Ok(AnnotationSet {
        speakers: speakers.clone(),
        pairs,
        vocabulary: vocabulary.clone(),
    })
}

pub fn write_annotations<W: Write>(set: &AnnotationSet, mut out: W) -> std::io::Result<()> {
    for p in set.pairs() {
        let names: Vec<&str> = p.descriptors.iter().map(Descriptor::as_str).collect();
        writeln!(out, "{}\t{}\t{}", p.weaker, p.stronger, names.join(","))?;
    }
    Ok(())
}

/// Percentage of descriptor mentions per vocabulary entry; a pair with k
/// descriptors contributes k mentions. Entries never mentioned map to 0.
pub fn descriptor_distribution(
    set: &AnnotationSet,
) -> Result<BTreeMap<Descriptor, f64>, CorpusError> {
    let total = set.mention_count();
    if total == 0 {
        return Err(CorpusError::EmptyAnnotationSet);
    }
    let mut counts: BTreeMap<Descriptor, usize> =
        set.vocabulary().names().into_iter().map(|d| (d, 0)).collect();
    for d in set.pairs().iter().flat_map(|p| &p.descriptors) {
        *counts.entry(d.clone()).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(d, c)| (d, 100.0 * c as f64 / total as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::{default_vocabulary, SpeakerRecord, UtteranceId};
    use super::*;
    use proptest::prelude::*;

    fn inventory() -> SpeakerInventory {
        let mk = |id: &str, g| SpeakerRecord {
            speaker_id: id.into(),
            gender: g,
            utterance_ids: vec![UtteranceId::new(format!("{id}_1"))],
        };
        SpeakerInventory::new(vec![
            mk("p001", Gender::Female),
            mk("p002", Gender::Female),
            mk("p003", Gender::Female),
            mk("p010", Gender::Male),
            mk("p011", Gender::Male),
        ])
        .unwrap()
    }

    fn parse(text: &str) -> Result<AnnotationSet, CorpusError> {
        parse_annotations(text, &default_vocabulary(), &inventory())
    }

    #[test]
    fn maps_row_fields() {
        let set = parse("p001\tp002\tBright,Low\n").unwrap();
        assert_eq!(set.pairs().len(), 1);
        let p = &set.pairs()[0];
        assert_eq!(p.weaker.as_str(), "p001");
        assert_eq!(p.stronger.as_str(), "p002");
        let names: Vec<_> = p.descriptors.iter().map(|d| d.as_str()).collect();
        assert_eq!(names, ["bright", "low"]);
    }

    #[test]
    fn shrill_on_male_pair_is_gender_violation() {
        let err = parse("p010\tp011\tShrill\n").unwrap_err();
        assert!(matches!(err, CorpusError::GenderViolation { line: 1, gender: Gender::Male, .. }));
        assert!(parse("p001\tp002\tshrill\n").is_ok());
        assert!(matches!(
            parse("p001\tp002\thusky\n").unwrap_err(),
            CorpusError::GenderViolation { .. }
        ));
    }

    #[test]
    fn each_malformation_class_has_its_error() {
        assert!(matches!(
            parse("p001\tp999\tbright\n").unwrap_err(),
            CorpusError::UnknownSpeaker { .. }
        ));
        assert!(matches!(
            parse("p001\tp002\tsparkly\n").unwrap_err(),
            CorpusError::UnknownDescriptor { .. }
        ));
        assert!(matches!(
            parse("p001\tp002\tbright,low,thin,slim\n").unwrap_err(),
            CorpusError::DescriptorCountViolation { count: 4, .. }
        ));
        assert!(matches!(
            parse("p001\tp002\t \n").unwrap_err(),
            CorpusError::DescriptorCountViolation { count: 0, .. }
        ));
        assert!(matches!(
            parse("p001\tp010\tbright\n").unwrap_err(),
            CorpusError::CrossGenderPair { .. }
        ));
        assert!(matches!(
            parse("p001\tp001\tbright\n").unwrap_err(),
            CorpusError::SelfPair { .. }
        ));
        assert!(matches!(
            parse("p001\tp002\n").unwrap_err(),
            CorpusError::MalformedRow { .. }
        ));
        assert!(matches!(
            parse("p001\tp002\tbright\n# note\np001\tp002\tlow,Bright\n").unwrap_err(),
            CorpusError::DuplicateTriple { line: 3, first_line: 1, .. }
        ));
        assert!(matches!(
            parse("p001\tp002\tbright\np002\tp001\tbright\n").unwrap_err(),
            CorpusError::ContradictoryTriple { line: 2, .. }
        ));
    }

    #[test]
    fn same_ordered_pair_may_repeat_with_new_descriptors() {
        let set = parse("p001\tp002\tbright\np001\tp002\tlow\n").unwrap();
        assert_eq!(set.pairs().len(), 2);
    }

    #[test]
    fn distribution_counts_mentions() {
        let set = parse("p001\tp002\tbright\n").unwrap();
        let dist = descriptor_distribution(&set).unwrap();
        assert_eq!(dist[&Descriptor::new("bright")], 100.0);

        // two pairs: {X} and {X, Y} -> 2/3 and 1/3
        let set = parse("p001\tp002\tbright\np002\tp003\tbright,low\n").unwrap();
        let dist = descriptor_distribution(&set).unwrap();
        assert!((dist[&Descriptor::new("bright")] - 200.0 / 3.0).abs() < 1e-12);
        assert!((dist[&Descriptor::new("low")] - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(dist[&Descriptor::new("thin")], 0.0);
    }

    #[test]
    fn distribution_of_empty_set_errors() {
        let set = parse("# nothing\n").unwrap();
        assert!(matches!(
            descriptor_distribution(&set),
            Err(CorpusError::EmptyAnnotationSet)
        ));
    }

    #[test]
    fn json_round_trip_revalidates() {
        let set = parse("p001\tp002\tbright,low\n").unwrap();
        let json = serde_json::to_string(&set).unwrap();
        let back: AnnotationSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, set);
        let tampered = json.replace(
            "\"descriptors\":[\"bright\",\"low\"]",
            "\"descriptors\":[\"husky\",\"low\"]",
        );
        assert_ne!(tampered, json);
        assert!(serde_json::from_str::<AnnotationSet>(&tampered).is_err());
    }

    fn arb_set() -> impl Strategy<Value = Vec<(usize, usize, Vec<usize>)>> {
        prop::collection::vec(
            (0usize..3, 0usize..3, prop::collection::vec(0usize..17, 1..=3)),
            0..40,
        )
    }

    /// Builds a valid annotation text from random indices, skipping rows that
    /// would break an invariant.
    fn build_text(rows: &[(usize, usize, Vec<usize>)]) -> String {
        let speakers = ["p001", "p002", "p003"];
        let vocab = default_vocabulary().for_gender(Gender::Female);
        let mut seen = BTreeSet::new();
        let mut text = String::new();
        for (a, b, ds) in rows {
            if a == b {
                continue;
            }
            let set: BTreeSet<_> = ds.iter().map(|&i| vocab[i].clone()).collect();
            if set.iter().any(|d| {
                seen.contains(&(*a, *b, d.clone())) || seen.contains(&(*b, *a, d.clone()))
            }) {
                continue;
            }
            for d in &set {
                seen.insert((*a, *b, d.clone()));
            }
            let names: Vec<_> = set.iter().map(|d| d.as_str().to_uppercase()).collect();
            text.push_str(&format!("{}\t{}\t{}\n", speakers[*a], speakers[*b], names.join(",")));
        }
        text
    }

    proptest! {
        #[test]
        fn parse_write_parse_is_identity(rows in arb_set()) {
            let set = parse(&build_text(&rows)).unwrap();
            let mut buf = Vec::new();
            write_annotations(&set, &mut buf).unwrap();
            let again = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
            prop_assert_eq!(again, set);
        }

        #[test]
        fn distribution_sums_to_hundred(rows in arb_set()) {
            let set = parse(&build_text(&rows)).unwrap();
            if set.pairs().is_empty() {
                return Ok(());
            }
            let dist = descriptor_distribution(&set).unwrap();
            prop_assert!(dist.values().all(|&v| v >= 0.0));
            let total: f64 = dist.values().sum();
            prop_assert!((total - 100.0).abs() < 1e-9);
        }

        #[test]
        fn accepted_pairs_satisfy_invariants(
            a in 0usize..6, b in 0usize..6, ds in prop::collection::vec("[a-z]{3,8}|bright|low|shrill|husky", 0..5)
        ) {
            let ids = ["p001", "p002", "p003", "p010", "p011", "p404"];
            let text = format!("{}\t{}\t{}\n", ids[a], ids[b], ds.join(","));
            let vocab = default_vocabulary();
            let inv = inventory();
            match parse_annotations(&text, &vocab, &inv) {
                Ok(set) => {
                    for p in set.pairs() {
                        prop_assert!(p.weaker != p.stronger);
                        let g = inv.gender_of(&p.weaker).unwrap();
                        prop_assert_eq!(Some(g), inv.gender_of(&p.stronger));
                        prop_assert!((1..=3).contains(&p.descriptors.len()));
                        for d in &p.descriptors {
                            prop_assert!(vocab.get(d.as_str()).unwrap().restriction.allows(g));
                        }
                    }
                }
                Err(e) => prop_assert!(e.line() == Some(1)),
            }
        }
    }
}
