//! EER and accuracy per (gender, descriptor) cell, submission validation,
//! and the unweighted cross-cell average used for ranking.

mod metrics;
mod submission;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Descriptor, Gender};
use crate::protocol::{gender_from_trial_id, TrialList, Track};
use crate::report::ValidationReport;

pub use metrics::{compute_acc, compute_eer};
pub use submission::{
    parse_submission, validate_against_ids, validate_submission, SubmissionEntry, SubmissionFile,
    SubmissionIssue,
};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("SingleClassInput: {positives} positives, {negatives} negatives")]
    SingleClassInput { positives: usize, negatives: usize },
    #[error("EmptyInput")]
    EmptyInput,
    #[error("non-finite score")]
    NonFiniteScore,
    #[error("malformed submission at line {line}: {reason}")]
    MalformedSubmission { line: usize, reason: String },
    #[error("submission failed validation:\n{0}")]
    InvalidSubmission(ValidationReport<SubmissionIssue>),
    #[error("trial `{0}` does not encode a gender")]
    UngroupableTrial(String),
}

/// A key trial joined with a submission row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredTrial {
    pub trial_id: String,
    pub label: bool,
    pub score: Option<f64>,
    pub decision: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub gender: Gender,
    pub descriptor: Descriptor,
}

impl CellKey {
    pub fn label(&self) -> String {
        format!("{}.{}", self.gender.as_str(), self.descriptor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellMetrics {
    /// Absent when the cell lacks scores or has a single class.
    pub eer: Option<f64>,
    pub acc: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScoreOptions {
    /// Also compute one EER over all scored trials pooled across cells.
    pub pooled_eer: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub track: Track,
    pub team: Option<String>,
    pub system: Option<String>,
    pub cells: BTreeMap<CellKey, CellMetrics>,
    /// Mean of the present per-cell EERs.
    pub overall_eer: Option<f64>,
    /// Mean of the per-cell ACCs.
    pub overall_acc: f64,
    pub absent_eer_cells: Vec<String>,
    pub pooled_eer: Option<f64>,
    pub warnings: Vec<String>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

impl MetricsReport {
    pub fn eer_cells(&self) -> usize {
        self.cells.values().filter(|c| c.eer.is_some()).count()
    }

    /// Machine-readable `key=value` lines, one per field, sorted by cell.
    ///
    /// Fields: `track`, `team`, `system`, then per cell
    /// `cell.<gender>.<descriptor>.{eer,acc,positives,negatives}`, then
    /// `overall.eer`, `overall.acc`, `overall.eer_cells`,
    /// `overall.absent_eer_cells` (comma-separated) and, when requested,
    /// `overall.pooled_eer`. Missing values print as `NA`.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "track={}", self.track);
        let _ = writeln!(s, "team={}", self.team.as_deref().unwrap_or("NA"));
        let _ = writeln!(s, "system={}", self.system.as_deref().unwrap_or("NA"));
        for (k, c) in &self.cells {
            let p = format!("cell.{}", k.label());
            let _ = writeln!(s, "{p}.eer={}", fmt_opt(c.eer));
            let _ = writeln!(s, "{p}.acc={}", c.acc);
            let _ = writeln!(s, "{p}.positives={}", c.positives);
            let _ = writeln!(s, "{p}.negatives={}", c.negatives);
        }
        let _ = writeln!(s, "overall.eer={}", fmt_opt(self.overall_eer));
        let _ = writeln!(s, "overall.acc={}", self.overall_acc);
        let _ = writeln!(s, "overall.eer_cells={}", self.eer_cells());
        let _ = writeln!(s, "overall.absent_eer_cells={}", self.absent_eer_cells.join(","));
        if let Some(p) = self.pooled_eer {
            let _ = writeln!(s, "overall.pooled_eer={p}");
        }
        s
    }

    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let pct = |v: Option<f64>| v.map(|x| format!("{:6.2}", 100.0 * x)).unwrap_or_else(|| "    NA".into());
        let mut s = String::new();
        let _ = writeln!(
            s,
            "track {}  team {}  system {}",
            self.track,
            self.team.as_deref().unwrap_or("-"),
            self.system.as_deref().unwrap_or("-")
        );
        let _ = writeln!(s, "{:<8} {:<12} {:>7} {:>7} {:>5} {:>5}", "gender", "descriptor", "EER%", "ACC%", "pos", "neg");
        for (k, c) in &self.cells {
            let _ = writeln!(
                s,
                "{:<8} {:<12} {:>7} {:>7} {:>5} {:>5}",
                k.gender.as_str(),
                k.descriptor.as_str(),
                pct(c.eer),
                pct(Some(c.acc)),
                c.positives,
                c.negatives
            );
        }
        let _ = writeln!(
            s,
            "overall  EER% {} over {} cells   ACC% {}",
            pct(self.overall_eer),
            self.eer_cells(),
            pct(Some(self.overall_acc))
        );
        if let Some(p) = self.pooled_eer {
            let _ = writeln!(s, "pooled   EER% {}", pct(Some(p)));
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

/// Scores a validated submission against the labelled key.
pub fn score_against_key(
    sub: &SubmissionFile,
    key: &TrialList,
    options: ScoreOptions,
) -> Result<MetricsReport, ScoringError> {
    let report = validate_submission(sub, key);
    if !report.is_empty() {
        return Err(ScoringError::InvalidSubmission(report));
    }
    let rows: HashMap<&str, &SubmissionEntry> = sub.entries.iter().map(|e| (e.trial_id.as_str(), e)).collect();
    let mut grouped: BTreeMap<CellKey, Vec<ScoredTrial>> = BTreeMap::new();
    for item in &key.items {
        let gender = gender_from_trial_id(&item.trial_id)
            .ok_or_else(|| ScoringError::UngroupableTrial(item.trial_id.clone()))?;
        let row = rows[item.trial_id.as_str()];
        grouped
            .entry(CellKey {
                gender,
                descriptor: item.descriptor.clone(),
            })
            .or_default()
            .push(ScoredTrial {
                trial_id: item.trial_id.clone(),
                label: item.label,
                score: row.score,
                decision: Some(row.decision == 1),
            });
    }

    let mut cells = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut absent = Vec::new();
    for (key_cell, trials) in grouped {
        let positives = trials.iter().filter(|t| t.label).count();
        let negatives = trials.len() - positives;
        let scores: Option<Vec<(f64, bool)>> = trials.iter().map(|t| t.score.map(|s| (s, t.label))).collect();
        let eer = match scores {
            None => None,
            Some(s) => match compute_eer(&s) {
                Ok(e) => Some(e),
                Err(e) => {
                    warnings.push(format!("cell {}: EER not computed ({e})", key_cell.label()));
                    None
                }
            },
        };
        if eer.is_none() {
            absent.push(key_cell.label());
        }
        let decisions: Vec<(bool, bool)> = trials
            .iter()
            .map(|t| (t.decision.expect("submission rows carry decisions"), t.label))
            .collect();
        cells.insert(
            key_cell,
            CellMetrics {
                eer,
                acc: compute_acc(&decisions)?,
                positives,
                negatives,
            },
        );
    }
    let present: Vec<f64> = cells.values().filter_map(|c| c.eer).collect();
    let overall_eer = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    let overall_acc = if cells.is_empty() {
        return Err(ScoringError::EmptyInput);
    } else {
        cells.values().map(|c| c.acc).sum::<f64>() / cells.len() as f64
    };
    let pooled_eer = if options.pooled_eer {
        let all: Option<Vec<(f64, bool)>> = key
            .items
            .iter()
            .map(|t| rows[t.trial_id.as_str()].score.map(|s| (s, t.label)))
            .collect();
        all.and_then(|a| compute_eer(&a).ok())
    } else {
        None
    };
    Ok(MetricsReport {
        track: key.track,
        team: sub.team.clone(),
        system: sub.system.clone(),
        cells,
        overall_eer,
        overall_acc,
        absent_eer_cells: absent,
        pooled_eer,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::TrialItem;

    fn key(cells: &[(&str, &str, usize, usize)]) -> TrialList {
        let mut items = Vec::new();
        for (g, d, pos, neg) in cells {
            for i in 0..pos + neg {
                items.push(TrialItem {
                    trial_id: format!("unseen-{g}-{d}-0000-{i:03}"),
                    utterance_first: "a".into(),
                    utterance_second: "b".into(),
                    descriptor: Descriptor::new(d),
                    label: i < *pos,
                });
            }
        }
        TrialList {
            items,
            track: Track::Unseen,
            split_ref: "x".into(),
            generation_seed: 1,
            extra: BTreeMap::new(),
        }
    }

    fn oracle_submission(key: &TrialList, with_scores: bool) -> SubmissionFile {
        SubmissionFile {
            team: Some("t".into()),
            track: Some(Track::Unseen),
            system: Some("s".into()),
            extra: BTreeMap::new(),
            entries: key
                .items
                .iter()
                .map(|t| SubmissionEntry {
                    trial_id: t.trial_id.clone(),
                    score: with_scores.then_some(if t.label { 0.9 } else { 0.1 }),
                    decision: i64::from(t.label),
                    line: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn perfect_submission() {
        let k = key(&[("female", "bright", 100, 300), ("male", "low", 100, 300)]);
        let r = score_against_key(&oracle_submission(&k, true), &k, ScoreOptions { pooled_eer: true }).unwrap();
        assert!(r.cells.values().all(|c| c.acc == 1.0 && c.eer == Some(0.0)));
        assert_eq!((r.overall_acc, r.overall_eer, r.pooled_eer), (1.0, Some(0.0), Some(0.0)));
        assert_eq!(r.cells.values().next().unwrap().positives, 100);
        let kv = r.to_key_values();
        assert!(kv.contains("cell.female.bright.eer=0\n"));
        assert!(kv.contains("overall.eer_cells=2\n"));
    }

    #[test]
    fn decisions_only_gives_absent_eer() {
        let k = key(&[("female", "bright", 2, 6), ("male", "low", 2, 6)]);
        let r = score_against_key(&oracle_submission(&k, false), &k, ScoreOptions::default()).unwrap();
        assert!(r.cells.values().all(|c| c.eer.is_none()));
        assert_eq!(r.overall_eer, None);
        assert_eq!(r.overall_acc, 1.0);
        assert_eq!(r.absent_eer_cells, vec!["female.bright", "male.low"]);
        assert!(r.to_key_values().contains("overall.eer=NA\n"));
    }

    #[test]
    fn overall_is_unweighted_mean_of_cells() {
        let k = key(&[("female", "bright", 5, 5), ("male", "low", 10, 30)]);
        let mut sub = oracle_submission(&k, true);
        // one wrong decision in the first cell (ACC 0.9), twelve in the second (ACC 0.7)
        sub.entries[0].decision = 0;
        for e in sub.entries[10..22].iter_mut() {
            e.decision = 1 - e.decision;
        }
        let r = score_against_key(&sub, &k, ScoreOptions::default()).unwrap();
        let accs: Vec<f64> = r.cells.values().map(|c| c.acc).collect();
        assert_eq!(accs, vec![0.9, 0.7]);
        assert!((r.overall_acc - 0.8).abs() < 1e-12);
    }

    #[test]
    fn single_class_cell_warns_instead_of_failing() {
        let k = key(&[("female", "bright", 3, 0), ("male", "low", 1, 3)]);
        let r = score_against_key(&oracle_submission(&k, true), &k, ScoreOptions::default()).unwrap();
        assert_eq!(r.absent_eer_cells, vec!["female.bright"]);
        assert_eq!(r.overall_eer, Some(0.0));
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn invalid_submission_is_refused() {
        let k = key(&[("female", "bright", 1, 1)]);
        let mut sub = oracle_submission(&k, true);
        sub.entries.pop();
        assert!(matches!(
            score_against_key(&sub, &k, ScoreOptions::default()),
            Err(ScoringError::InvalidSubmission(r)) if r.len() == 1
        ));
    }
}
