//! Submission files: `trial_id<TAB>score<TAB>decision`, `NA` allowed as the
//! score, after a `#team=<t> track=<seen|unseen> system=<label>` header.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;

use serde::Serialize;

use super::ScoringError;
use crate::diffnet::PredictionRecord;
use crate::protocol::{TrialList, Track};
use crate::report::ValidationReport;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SubmissionEntry {
    pub trial_id: String,
    pub score: Option<f64>,
    /// Raw decision column; anything but 0 or 1 is flagged by validation.
    pub decision: i64,
    /// 1-based line in the source file (0 for in-memory entries).
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubmissionFile {
    pub team: Option<String>,
    pub track: Option<Track>,
    pub system: Option<String>,
    pub extra: BTreeMap<String, String>,
    pub entries: Vec<SubmissionEntry>,
}

impl SubmissionFile {
    pub fn from_predictions<T: Scalar>(
        records: &[PredictionRecord<T>],
        team: &str,
        track: Track,
        system: &str,
    ) -> Self {
        Self {
            team: Some(team.to_string()),
            track: Some(track),
            system: Some(system.to_string()),
            extra: BTreeMap::new(),
            entries: records
                .iter()
                .map(|r| SubmissionEntry {
                    trial_id: r.trial_id.clone(),
                    score: Some(r.score.to_f64_exact()),
                    decision: i64::from(r.decision),
                    line: 0,
                })
                .collect(),
        }
    }

    pub fn has_scores(&self) -> bool {
        self.entries.iter().any(|e| e.score.is_some())
    }

    /// Scores print in shortest round-trip form, so a written file parses
    /// back to the same values.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(
            out,
            "#team={} track={} system={}",
            self.team.as_deref().unwrap_or("anonymous"),
            self.track.map(|t| t.as_str()).unwrap_or("unknown"),
            self.system.as_deref().unwrap_or("unnamed")
        )?;
        for (k, v) in &self.extra {
            write!(out, " {k}={v}")?;
        }
        writeln!(out)?;
        for e in &self.entries {
            match e.score {
                Some(s) => writeln!(out, "{}\t{}\t{}", e.trial_id, s, e.decision)?,
                None => writeln!(out, "{}\tNA\t{}", e.trial_id, e.decision)?,
            }
        }
        Ok(())
    }
}

/// Parses a submission. Only structural problems are errors; field-domain
/// problems (NaN scores, decisions outside {0,1}, duplicates) are left for
/// [`validate_submission`] so they can be reported together.
pub fn parse_submission(text: &str) -> Result<SubmissionFile, ScoringError> {
    let mut sub = SubmissionFile::default();
    let malformed = |line: usize, reason: String| ScoringError::MalformedSubmission { line, reason };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(header) = trimmed.strip_prefix('#') {
            for token in header.split_whitespace() {
                let Some((k, v)) = token.split_once('=') else {
                    continue;
                };
                match k {
                    "team" => sub.team = Some(v.to_string()),
                    "system" => sub.system = Some(v.to_string()),
                    "track" => {
                        sub.track = Some(v.parse().map_err(|_| malformed(line, format!("unknown track `{v}`")))?)
                    }
                    _ => {
                        sub.extra.insert(k.to_string(), v.to_string());
                    }
                }
            }
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(malformed(line, format!("expected 3 tab-separated columns, found {}", cols.len())));
        }
        let score = match cols[1] {
            "NA" => None,
            s => Some(s.parse::<f64>().map_err(|_| malformed(line, format!("unparsable score `{s}`")))?),
        };
        let decision = cols[2]
            .parse::<i64>()
            .map_err(|_| malformed(line, format!("unparsable decision `{}`", cols[2])))?;
        sub.entries.push(SubmissionEntry {
            trial_id: cols[0].to_string(),
            score,
            decision,
            line,
        });
    }
    Ok(sub)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SubmissionIssue {
    MissingHeader,
    TrackMismatch { expected: Track, found: Track },
    MissingTrial { trial_id: String },
    UnknownTrial { trial_id: String, line: usize },
    DuplicateTrial { trial_id: String, line: usize, first_line: usize },
    NonFiniteScore { trial_id: String, line: usize },
    InvalidDecision { trial_id: String, line: usize, value: i64 },
}

impl fmt::Display for SubmissionIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingHeader => write!(f, "header line `#team=... track=... system=...` missing or incomplete"),
            Self::TrackMismatch { expected, found } => {
                write!(f, "submission is for track `{found}`, key is for `{expected}`")
            }
            Self::MissingTrial { trial_id } => write!(f, "missing trial `{trial_id}`"),
            Self::UnknownTrial { trial_id, line } => write!(f, "line {line}: trial `{trial_id}` is not in the key"),
            Self::DuplicateTrial { trial_id, line, first_line } => {
                write!(f, "line {line}: trial `{trial_id}` repeated (first on line {first_line})")
            }
            Self::NonFiniteScore { trial_id, line } => {
                write!(f, "line {line}: trial `{trial_id}` has a non-finite score")
            }
            Self::InvalidDecision { trial_id, line, value } => {
                write!(f, "line {line}: trial `{trial_id}` has decision {value}, expected 0 or 1")
            }
        }
    }
}

/// Checks the submission against the key's trial ids and the field domains.
pub fn validate_submission(sub: &SubmissionFile, key: &TrialList) -> ValidationReport<SubmissionIssue> {
    let ids: Vec<&str> = key.items.iter().map(|t| t.trial_id.as_str()).collect();
    validate_against_ids(sub, &ids, Some(key.track))
}

/// Same checks against a bare id list (e.g. a participant trial file).
pub fn validate_against_ids(
    sub: &SubmissionFile,
    ids: &[&str],
    track: Option<Track>,
) -> ValidationReport<SubmissionIssue> {
    let mut report = ValidationReport::default();
    if sub.team.is_none() || sub.track.is_none() || sub.system.is_none() {
        report.push(SubmissionIssue::MissingHeader);
    }
    if let (Some(expected), Some(found)) = (track, sub.track) {
        if expected != found {
            report.push(SubmissionIssue::TrackMismatch { expected, found });
        }
    }
    let known: HashSet<&str> = ids.iter().copied().collect();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for e in &sub.entries {
        let id = e.trial_id.as_str();
        if let Some(&first_line) = seen.get(id) {
            report.push(SubmissionIssue::DuplicateTrial {
                trial_id: id.to_string(),
                line: e.line,
                first_line,
            });
            continue;
        }
        seen.insert(id, e.line);
        if !known.contains(id) {
            report.push(SubmissionIssue::UnknownTrial {
                trial_id: id.to_string(),
                line: e.line,
            });
        }
        if e.score.is_some_and(|s| !s.is_finite()) {
            report.push(SubmissionIssue::NonFiniteScore {
                trial_id: id.to_string(),
                line: e.line,
            });
        }
        if e.decision != 0 && e.decision != 1 {
            report.push(SubmissionIssue::InvalidDecision {
                trial_id: id.to_string(),
                line: e.line,
                value: e.decision,
            });
        }
    }
    for id in ids {
        if !seen.contains_key(id) {
            report.push(SubmissionIssue::MissingTrial { trial_id: id.to_string() });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "#team=lab7 track=unseen system=base-1 run=3\nt1\t0.75\t1\nt2\tNA\t0\n";

    #[test]
    fn round_trip_keeps_header_extras_and_na() {
        let sub = parse_submission(GOOD).unwrap();
        assert_eq!(sub.team.as_deref(), Some("lab7"));
        assert_eq!(sub.track, Some(Track::Unseen));
        assert_eq!(sub.extra["run"], "3");
        assert_eq!(sub.entries[1].score, None);
        let mut out = Vec::new();
        sub.write(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), GOOD);
    }

    #[test]
    fn domain_problems_are_reported_not_fatal() {
        let sub = parse_submission("#team=a track=seen system=b\nt1\tNaN\t1\nt2\t0.1\t2\nt1\t0.3\t0\nzz\t0.3\t0\n").unwrap();
        let report = validate_against_ids(&sub, &["t1", "t2", "t3"], Some(Track::Unseen));
        let text = report.to_string();
        assert!(report.issues.contains(&SubmissionIssue::NonFiniteScore { trial_id: "t1".into(), line: 2 }));
        assert!(report.issues.contains(&SubmissionIssue::InvalidDecision { trial_id: "t2".into(), line: 3, value: 2 }));
        assert!(report.issues.contains(&SubmissionIssue::DuplicateTrial { trial_id: "t1".into(), line: 4, first_line: 2 }));
        assert!(report.issues.contains(&SubmissionIssue::UnknownTrial { trial_id: "zz".into(), line: 5 }));
        assert!(report.issues.contains(&SubmissionIssue::MissingTrial { trial_id: "t3".into() }));
        assert!(report.issues.contains(&SubmissionIssue::TrackMismatch { expected: Track::Unseen, found: Track::Seen }));
        assert!(text.contains("t3"));
    }

    #[test]
    fn structural_problems_are_errors() {
        assert!(matches!(
            parse_submission("t1\t0.5\n"),
            Err(ScoringError::MalformedSubmission { line: 1, .. })
        ));
        assert!(matches!(
            parse_submission("#x\nt1\tabc\t1\n"),
            Err(ScoringError::MalformedSubmission { line: 2, .. })
        ));
    }

    #[test]
    fn missing_header_is_flagged() {
        let sub = parse_submission("t1\t0.5\t1\n").unwrap();
        let report = validate_against_ids(&sub, &["t1"], None);
        assert_eq!(report.issues, vec![SubmissionIssue::MissingHeader]);
    }
}
