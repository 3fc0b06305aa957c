//! Trial list files.
//!
//! Key file: `trial_id<TAB>utterance_first<TAB>utterance_second<TAB>descriptor<TAB>label`.
//! Participant file: the same without the label column. Both start with a
//! `#track=<t> split=<digest> seed=<n> [key=value ...]` provenance line.

use std::collections::BTreeMap;
use std::io::Write;

use super::trials::{TrialItem, TrialList};
use super::{ProtocolError, Track};
use crate::corpus::{Descriptor, UtteranceId};

/// Trial as distributed to participants (no label).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialRef {
    pub trial_id: String,
    pub utterance_first: UtteranceId,
    pub utterance_second: UtteranceId,
    pub descriptor: Descriptor,
}

impl From<&TrialItem> for TrialRef {
    fn from(item: &TrialItem) -> Self {
        TrialRef {
            trial_id: item.trial_id.clone(),
            utterance_first: item.utterance_first.clone(),
            utterance_second: item.utterance_second.clone(),
            descriptor: item.descriptor.clone(),
        }
    }
}

fn write_header<W: Write>(trials: &TrialList, out: &mut W) -> std::io::Result<()> {
    write!(
        out,
        "#track={} split={} seed={}",
        trials.track, trials.split_ref, trials.generation_seed
    )?;
    for (k, v) in &trials.extra {
        write!(out, " {k}={v}")?;
    }
    writeln!(out)
}

pub fn write_trial_key<W: Write>(trials: &TrialList, mut out: W) -> std::io::Result<()> {
    write_header(trials, &mut out)?;
    for t in &trials.items {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            t.trial_id,
            t.utterance_first,
            t.utterance_second,
            t.descriptor,
            u8::from(t.label)
        )?;
    }
    Ok(())
}

pub fn write_participant_trials<W: Write>(trials: &TrialList, mut out: W) -> std::io::Result<()> {
    write_header(trials, &mut out)?;
    for t in &trials.items {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            t.trial_id, t.utterance_first, t.utterance_second, t.descriptor
        )?;
    }
    Ok(())
}

struct Header {
    track: Option<Track>,
    split_ref: String,
    seed: u64,
    extra: BTreeMap<String, String>,
}

fn parse_header(line: &str) -> Result<Header, ProtocolError> {
    let mut header = Header {
        track: None,
        split_ref: String::new(),
        seed: 0,
        extra: BTreeMap::new(),
    };
    for token in line.trim_start_matches('#').split_whitespace() {
        let Some((k, v)) = token.split_once('=') else {
            continue;
        };
        match k {
            "track" => header.track = Some(v.parse()?),
            "split" => header.split_ref = v.to_string(),
            "seed" => {
                header.seed = v.parse().map_err(|_| ProtocolError::MalformedTrial {
                    line: 1,
                    reason: format!("bad seed `{v}`"),
                })?
            }
            _ => {
                header.extra.insert(k.to_string(), v.to_string());
            }
        }
    }
    Ok(header)
}

fn rows(text: &str) -> (Option<&str>, Vec<(usize, &str)>) {
    let mut header = None;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if header.is_none() && out.is_empty() && line.contains('=') {
                header = Some(line);
            }
            continue;
        }
        out.push((i + 1, line));
    }
    (header, out)
}

fn parse_ref(line: usize, cols: &[&str]) -> Result<TrialRef, ProtocolError> {
    if cols.iter().any(|c| c.trim().is_empty()) {
        return Err(ProtocolError::MalformedTrial {
            line,
            reason: "empty field".into(),
        });
    }
    Ok(TrialRef {
        trial_id: cols[0].trim().to_string(),
        utterance_first: UtteranceId::new(cols[1]),
        utterance_second: UtteranceId::new(cols[2]),
        descriptor: Descriptor::new(cols[3]),
    })
}

pub fn parse_trial_key(text: &str) -> Result<TrialList, ProtocolError> {
    let (header, rows) = rows(text);
    let header = header.map(parse_header).transpose()?;
    let mut items = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let cols: Vec<&str> = row.split('\t').collect();
        if cols.len() != 5 {
            return Err(ProtocolError::MalformedTrial {
                line,
                reason: format!("expected 5 columns, found {}", cols.len()),
            });
        }
        let r = parse_ref(line, &cols)?;
        let label = match cols[4].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(ProtocolError::MalformedTrial {
                    line,
                    reason: format!("label `{other}` is not 0 or 1"),
                })
            }
        };
        items.push(TrialItem {
            trial_id: r.trial_id,
            utterance_first: r.utterance_first,
            utterance_second: r.utterance_second,
            descriptor: r.descriptor,
            label,
        });
    }
    let track = header
        .as_ref()
        .and_then(|h| h.track)
        .or_else(|| items.first().and_then(|i| i.trial_id.split('-').next()?.parse().ok()))
        .unwrap_or(Track::Unseen);
    let (split_ref, generation_seed, extra) = match header {
        Some(h) => (h.split_ref, h.seed, h.extra),
        None => (String::new(), 0, BTreeMap::new()),
    };
    Ok(TrialList {
        items,
        track,
        split_ref,
        generation_seed,
        extra,
    })
}

/// Parses a participant trial file. A key file is accepted too; its label
/// column is ignored.
pub fn parse_trial_refs(
    text: &str,
) -> Result<(Vec<TrialRef>, BTreeMap<String, String>), ProtocolError> {
    let (header, rows) = rows(text);
    let mut meta = BTreeMap::new();
    if let Some(h) = header.map(parse_header).transpose()? {
        if let Some(t) = h.track {
            meta.insert("track".to_string(), t.to_string());
        }
        meta.insert("split".to_string(), h.split_ref);
        meta.insert("seed".to_string(), h.seed.to_string());
        meta.extend(h.extra);
    }
    let mut refs = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let cols: Vec<&str> = row.split('\t').collect();
        if cols.len() != 4 && cols.len() != 5 {
            return Err(ProtocolError::MalformedTrial {
                line,
                reason: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        refs.push(parse_ref(line, &cols[..4])?);
    }
    Ok((refs, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::split::tests::{toy_config, toy_six};
    use crate::protocol::{build_split, generate_trials};

    #[test]
    fn key_file_round_trip_and_participant_file_has_no_labels() {
        let set = toy_six();
        let plan = build_split(&set, &toy_config(&["bright"])).unwrap();
        let mut trials = generate_trials(&plan, &set, 3).unwrap();
        trials.extra.insert("config".into(), "abc".into());
        let mut key = Vec::new();
        write_trial_key(&trials, &mut key).unwrap();
        let back = parse_trial_key(std::str::from_utf8(&key).unwrap()).unwrap();
        assert_eq!(back, trials);

        let mut participant = Vec::new();
        write_participant_trials(&trials, &mut participant).unwrap();
        let text = String::from_utf8(participant).unwrap();
        assert!(text.lines().skip(1).all(|l| l.split('\t').count() == 4));
        let (refs, meta) = parse_trial_refs(&text).unwrap();
        assert_eq!(refs.len(), 400);
        assert_eq!(meta["config"], "abc");
        assert_eq!(meta["split"], plan.digest());
        assert_eq!(refs[3], TrialRef::from(&trials.items[3]));
    }

    #[test]
    fn malformed_rows_report_line() {
        let err = parse_trial_key("#track=seen split=x seed=1\nid\ta\tb\tbright\t2\n").unwrap_err();
        assert!(matches!(err, ProtocolError::MalformedTrial { line: 2, .. }));
        let err = parse_trial_key("id\ta\tb\n").unwrap_err();
        assert!(matches!(err, ProtocolError::MalformedTrial { line: 1, .. }));
    }

    #[test]
    fn headerless_key_infers_track_from_ids() {
        let list = parse_trial_key("seen-male-low-0001-000\ta\tb\tlow\t1\n").unwrap();
        assert_eq!(list.track, Track::Seen);
        assert_eq!(list.items[0].gender(), Some(crate::corpus::Gender::Male));
    }
}
