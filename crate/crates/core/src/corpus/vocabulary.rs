use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Gender};

/// Sum of the 18 reference percentages as published (they do not add to 100).
pub const TABLE_REFERENCE_SUM: f64 = 93.19;

/// Normalized descriptor token: trimmed and lowercased.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Descriptor(String);

impl Descriptor {
    pub fn new(raw: impl AsRef<str>) -> Self {
        Self(raw.as_ref().trim().to_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Descriptor {
    fn from(raw: &str) -> Self {
        Self::new(raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenderRestriction {
    None,
    FemaleOnly,
    MaleOnly,
}

impl GenderRestriction {
    pub fn allows(self, gender: Gender) -> bool {
        match self {
            GenderRestriction::None => true,
            GenderRestriction::FemaleOnly => gender == Gender::Female,
            GenderRestriction::MaleOnly => gender == Gender::Male,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorEntry {
    pub name: Descriptor,
    pub translation: String,
    pub restriction: GenderRestriction,
    /// Share of annotations carrying this descriptor, in percent.
    pub reference_percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DescriptorEntry>", into = "Vec<DescriptorEntry>")]
pub struct DescriptorVocabulary {
    entries: Vec<DescriptorEntry>,
}

impl DescriptorVocabulary {
    /// Builds a vocabulary; names must be unique after normalization and the
    /// reference percentages non-negative with a total of at most 100 (+0.1
    /// rounding slack).
    pub fn new(entries: Vec<DescriptorEntry>) -> Result<Self, CorpusError> {
        if entries.is_empty() {
            return Err(CorpusError::InvalidVocabulary("no descriptors".into()));
        }
        let mut seen = BTreeSet::new();
        let mut total = 0.0;
        let mut normalized = Vec::with_capacity(entries.len());
        for mut entry in entries {
            entry.name = Descriptor::new(entry.name.as_str());
            if entry.name.as_str().is_empty() || entry.name.as_str().contains([',', '\t']) {
                return Err(CorpusError::InvalidVocabulary(format!(
                    "invalid descriptor name `{}`",
                    entry.name
                )));
            }
            if !seen.insert(entry.name.clone()) {
                return Err(CorpusError::InvalidVocabulary(format!(
                    "duplicate descriptor `{}`",
                    entry.name
                )));
            }
            if !(entry.reference_percentage >= 0.0 && entry.reference_percentage.is_finite()) {
                return Err(CorpusError::InvalidVocabulary(format!(
                    "descriptor `{}` has invalid percentage {}",
                    entry.name, entry.reference_percentage
                )));
            }
            total += entry.reference_percentage;
            normalized.push(entry);
        }
        if total > 100.1 {
            return Err(CorpusError::InvalidVocabulary(format!(
                "reference percentages sum to {total}"
            )));
        }
        Ok(Self {
            entries: normalized,
        })
    }

    pub fn entries(&self) -> &[DescriptorEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&DescriptorEntry> {
        let key = Descriptor::new(name);
        self.entries.iter().find(|e| e.name == key)
    }

    pub fn index_of(&self, name: &Descriptor) -> Option<usize> {
        self.entries.iter().position(|e| &e.name == name)
    }

    /// Descriptors admissible for pairs of the given gender, in vocabulary order.
    pub fn for_gender(&self, gender: Gender) -> Vec<Descriptor> {
        self.entries
            .iter()
            .filter(|e| e.restriction.allows(gender))
            .map(|e| e.name.clone())
            .collect()
    }

    pub fn names(&self) -> Vec<Descriptor> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn reference_sum(&self) -> f64 {
        self.entries.iter().map(|e| e.reference_percentage).sum()
    }

    /// Restricts the vocabulary to the given names, keeping the original order.
    pub fn subset(&self, names: &[Descriptor]) -> Result<Self, CorpusError> {
        for n in names {
            if self.index_of(n).is_none() {
                return Err(CorpusError::InvalidVocabulary(format!("unknown descriptor `{n}`")));
            }
        }
        Self::new(
            self.entries
                .iter()
                .filter(|e| names.contains(&e.name))
                .cloned()
                .collect(),
        )
    }
}

impl TryFrom<Vec<DescriptorEntry>> for DescriptorVocabulary {
    type Error = CorpusError;

    fn try_from(entries: Vec<DescriptorEntry>) -> Result<Self, Self::Error> {
        Self::new(entries)
    }
}

impl From<DescriptorVocabulary> for Vec<DescriptorEntry> {
    fn from(vocab: DescriptorVocabulary) -> Self {
        vocab.entries
    }
}

impl Default for DescriptorVocabulary {
    fn default() -> Self {
        default_vocabulary()
    }
}

const TABLE: [(&str, &str, GenderRestriction, f64); 18] = [
    ("bright", "明亮", GenderRestriction::None, 17.10),
    ("thin", "单薄", GenderRestriction::None, 13.03),
    ("coarse", "粗", GenderRestriction::None, 11.62),
    ("slim", "细", GenderRestriction::None, 11.31),
    ("low", "低沉", GenderRestriction::None, 7.43),
    ("pure", "干净", GenderRestriction::None, 5.48),
    ("rich", "厚实", GenderRestriction::None, 4.71),
    ("magnetic", "磁性", GenderRestriction::None, 3.64),
    ("muddy", "浑浊", GenderRestriction::None, 3.59),
    ("hoarse", "沙哑", GenderRestriction::None, 3.32),
    ("round", "圆润", GenderRestriction::None, 2.48),
    ("flat", "平淡", GenderRestriction::None, 2.15),
    ("shrill", "尖锐", GenderRestriction::FemaleOnly, 2.08),
    ("shriveled", "干瘪", GenderRestriction::None, 1.74),
    ("muffled", "沉闷", GenderRestriction::None, 1.44),
    ("soft", "柔和", GenderRestriction::None, 0.82),
    ("transparent", "通透", GenderRestriction::None, 0.66),
    ("husky", "干哑", GenderRestriction::MaleOnly, 0.59),
];

/// The 18-descriptor timbre vocabulary with reference percentages.
pub fn default_vocabulary() -> DescriptorVocabulary {
    let entries = TABLE
        .iter()
        .map(|&(name, translation, restriction, pct)| DescriptorEntry {
            name: Descriptor::new(name),
            translation: translation.to_string(),
            restriction,
            reference_percentage: pct,
        })
        .collect();
    DescriptorVocabulary::new(entries).expect("built-in vocabulary is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_eighteen_entries_with_reference_values() {
        let v = default_vocabulary();
        assert_eq!(v.len(), 18);
        assert_eq!(v.get("Bright").unwrap().reference_percentage, 17.10);
        assert_eq!(v.get("thin").unwrap().reference_percentage, 13.03);
        let husky = v.get("HUSKY ").unwrap();
        assert_eq!(husky.reference_percentage, 0.59);
        assert_eq!(husky.restriction, GenderRestriction::MaleOnly);
    }

    #[test]
    fn one_exclusive_descriptor_per_gender() {
        let v = default_vocabulary();
        let female_only: Vec<_> = v
            .entries()
            .iter()
            .filter(|e| e.restriction == GenderRestriction::FemaleOnly)
            .map(|e| e.name.as_str())
            .collect();
        let male_only: Vec<_> = v
            .entries()
            .iter()
            .filter(|e| e.restriction == GenderRestriction::MaleOnly)
            .map(|e| e.name.as_str())
            .collect();
        assert_eq!(female_only, ["shrill"]);
        assert_eq!(male_only, ["husky"]);
        assert_eq!(v.for_gender(Gender::Male).len(), 17);
        assert_eq!(v.for_gender(Gender::Female).len(), 17);
    }

    #[test]
    fn reference_column_sum_matches_hand_addition() {
        // 17.10 + 13.03 + 11.62 + 11.31 + 7.43 + 5.48 + 4.71 + 3.64 + 3.59
        // + 3.32 + 2.48 + 2.15 + 2.08 + 1.74 + 1.44 + 0.82 + 0.66 + 0.59
        let hundredths: u32 = [
            1710, 1303, 1162, 1131, 743, 548, 471, 364, 359, 332, 248, 215, 208, 174, 144, 82,
            66, 59,
        ]
        .iter()
        .sum();
        assert_eq!(hundredths, 9319);
        assert!((default_vocabulary().reference_sum() - TABLE_REFERENCE_SUM).abs() < 0.005);
    }

    #[test]
    fn rejects_duplicate_names_after_normalization() {
        let mut entries: Vec<_> = default_vocabulary().entries().to_vec();
        entries[1].name = Descriptor::new(" BRIGHT");
        assert!(matches!(
            DescriptorVocabulary::new(entries),
            Err(CorpusError::InvalidVocabulary(_))
        ));
    }

    #[test]
    fn rejects_percentages_above_hundred() {
        let mut entries: Vec<_> = default_vocabulary().entries().to_vec();
        entries[0].reference_percentage = 30.0;
        assert!(DescriptorVocabulary::new(entries).is_err());
    }

    #[test]
    fn subset_keeps_vocabulary_order() {
        let v = default_vocabulary();
        let sub = v.subset(&["low".into(), "bright".into()]).unwrap();
        assert_eq!(sub.names(), vec![Descriptor::new("bright"), Descriptor::new("low")]);
    }
}
