use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{data_lines, CorpusError, Gender, SpeakerId, UtteranceId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerRecord {
    pub speaker_id: SpeakerId,
    pub gender: Gender,
    pub utterance_ids: Vec<UtteranceId>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct InventoryData {
    speakers: Vec<SpeakerRecord>,
    #[serde(default)]
    audio: BTreeMap<UtteranceId, PathBuf>,
}

/// Speakers and their utterances. Utterance ids are unique corpus-wide so an
/// utterance always resolves to exactly one speaker.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InventoryData", into = "InventoryData")]
pub struct SpeakerInventory {
    speakers: BTreeMap<SpeakerId, SpeakerRecord>,
    owner: BTreeMap<UtteranceId, SpeakerId>,
    audio: BTreeMap<UtteranceId, PathBuf>,
}

impl SpeakerInventory {
    pub fn new(records: Vec<SpeakerRecord>) -> Result<Self, CorpusError> {
        let mut inv = Self::default();
        for (i, record) in records.into_iter().enumerate() {
            inv.insert(record, i + 1)?;
        }
        Ok(inv)
    }

    fn insert(&mut self, record: SpeakerRecord, line: usize) -> Result<(), CorpusError> {
        if record.utterance_ids.is_empty() {
            return Err(CorpusError::EmptyUtterances {
                line,
                speaker: record.speaker_id,
            });
        }
        if self.speakers.contains_key(&record.speaker_id) {
            return Err(CorpusError::DuplicateSpeaker {
                line,
                speaker: record.speaker_id,
            });
        }
        for utt in &record.utterance_ids {
            if self.owner.contains_key(utt) || utt.as_str().is_empty() {
                return Err(CorpusError::DuplicateUtterance {
                    line,
                    utterance: utt.clone(),
                });
            }
            self.owner.insert(utt.clone(), record.speaker_id.clone());
        }
        self.speakers.insert(record.speaker_id.clone(), record);
        Ok(())
    }

    /// Scans `<root>/<speaker_id>/<utterance_file>`; the utterance id is the
    /// file stem. Speakers missing from `genders` are skipped, as are files
    /// whose extension is not in `extensions` (compared case-insensitively).
    pub fn scan_directory(
        root: &Path,
        genders: &BTreeMap<SpeakerId, Gender>,
        extensions: &[&str],
    ) -> Result<Self, CorpusError> {
        let mut dirs: Vec<_> = std::fs::read_dir(root)?
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter(|e| e.path().is_dir())
            .collect();
        dirs.sort_by_key(|e| e.file_name());
        let mut inv = Self::default();
        for (i, dir) in dirs.iter().enumerate() {
            let speaker = SpeakerId::new(dir.file_name().to_string_lossy());
            let Some(&gender) = genders.get(&speaker) else {
                continue;
            };
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir.path())?
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .map(|e| e.path())
                .filter(|p| {
                    p.is_file()
                        && p.extension()
                            .and_then(|x| x.to_str())
                            .is_some_and(|x| extensions.iter().any(|e| e.eq_ignore_ascii_case(x)))
                })
                .collect();
            files.sort();
            let mut utterance_ids = Vec::with_capacity(files.len());
            for path in files {
                let id = UtteranceId::new(
                    path.file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                );
                inv.audio.insert(id.clone(), path);
                utterance_ids.push(id);
            }
            inv.insert(
                SpeakerRecord {
                    speaker_id: speaker,
                    gender,
                    utterance_ids,
                },
                i + 1,
            )?;
        }
        Ok(inv)
    }

    pub fn speakers(&self) -> impl Iterator<Item = &SpeakerRecord> {
        self.speakers.values()
    }

    pub fn get(&self, id: &SpeakerId) -> Option<&SpeakerRecord> {
        self.speakers.get(id)
    }

    pub fn contains(&self, id: &SpeakerId) -> bool {
        self.speakers.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn gender_of(&self, id: &SpeakerId) -> Option<Gender> {
        self.speakers.get(id).map(|r| r.gender)
    }

    pub fn speaker_of(&self, utterance: &UtteranceId) -> Option<&SpeakerId> {
        self.owner.get(utterance)
    }

    pub fn audio_path(&self, utterance: &UtteranceId) -> Option<&Path> {
        self.audio.get(utterance).map(PathBuf::as_path)
    }

    pub fn utterance_count(&self) -> usize {
        self.owner.len()
    }

    pub fn all_utterances(&self) -> impl Iterator<Item = &UtteranceId> {
        self.owner.keys()
    }
}

impl TryFrom<InventoryData> for SpeakerInventory {
    type Error = CorpusError;

    fn try_from(data: InventoryData) -> Result<Self, Self::Error> {
        let mut inv = Self::new(data.speakers)?;
        inv.audio = data.audio;
        Ok(inv)
    }
}

impl From<SpeakerInventory> for InventoryData {
    fn from(inv: SpeakerInventory) -> Self {
        InventoryData {
            speakers: inv.speakers.into_values().collect(),
            audio: inv.audio,
        }
    }
}

/// Parses `speaker_id<TAB>gender<TAB>utt[,utt...]` rows.
pub fn parse_inventory(text: &str) -> Result<SpeakerInventory, CorpusError> {
    let mut inv = SpeakerInventory::default();
    for (line, row) in data_lines(text) {
        let cols: Vec<&str> = row.split('\t').collect();
        if cols.len() != 3 {
            return Err(CorpusError::MalformedRow {
                line,
                reason: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let speaker = SpeakerId::new(cols[0]);
        if speaker.as_str().is_empty() {
            return Err(CorpusError::MalformedRow {
                line,
                reason: "empty speaker id".into(),
            });
        }
        let gender = Gender::parse(cols[1]).ok_or_else(|| CorpusError::UnknownGender {
            line,
            token: cols[1].to_string(),
        })?;
        let utterance_ids: Vec<UtteranceId> = cols[2]
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(UtteranceId::new)
            .collect();
        inv.insert(
            SpeakerRecord {
                speaker_id: speaker,
                gender,
                utterance_ids,
            },
            line,
        )?;
    }
    Ok(inv)
}

/// Parses `speaker_id<TAB>gender` rows, used alongside the directory scanner.
pub fn parse_gender_map(text: &str) -> Result<BTreeMap<SpeakerId, Gender>, CorpusError> {
    let mut out = BTreeMap::new();
    for (line, row) in data_lines(text) {
        let mut cols = row.split('\t');
        let (Some(id), Some(g)) = (cols.next(), cols.next()) else {
            return Err(CorpusError::MalformedRow {
                line,
                reason: "expected speaker_id<TAB>gender".into(),
            });
        };
        let gender = Gender::parse(g).ok_or_else(|| CorpusError::UnknownGender {
            line,
            token: g.to_string(),
        })?;
        if out.insert(SpeakerId::new(id), gender).is_some() {
            return Err(CorpusError::DuplicateSpeaker {
                line,
                speaker: SpeakerId::new(id),
            });
        }
    }
    Ok(out)
}

pub fn write_inventory<W: Write>(inv: &SpeakerInventory, mut out: W) -> std::io::Result<()> {
    for r in inv.speakers() {
        let utts: Vec<&str> = r.utterance_ids.iter().map(UtteranceId::as_str).collect();
        writeln!(out, "{}\t{}\t{}", r.speaker_id, r.gender, utts.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShortSpeaker {
    pub speaker_id: SpeakerId,
    pub available: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InventoryReport {
    pub short_speakers: Vec<ShortSpeaker>,
    /// Set when the inventory holds no speakers at all.
    pub zero_speakers: bool,
}

impl InventoryReport {
    pub fn is_empty(&self) -> bool {
        self.short_speakers.is_empty()
    }
}

/// Lists speakers holding fewer than `expected` utterances.
pub fn validate_inventory(inv: &SpeakerInventory, expected: usize) -> InventoryReport {
    InventoryReport {
        short_speakers: inv
            .speakers()
            .filter(|r| r.utterance_ids.len() < expected)
            .map(|r| ShortSpeaker {
                speaker_id: r.speaker_id.clone(),
                available: r.utterance_ids.len(),
            })
            .collect(),
        zero_speakers: inv.is_empty(),
    }
}
