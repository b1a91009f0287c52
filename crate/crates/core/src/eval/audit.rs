use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DatasetIndex;
use crate::error::{Error, Result};
use crate::eval::{archive_confusion, cm_delta, AccuracyReport, ConfusionDelta, ConfusionMatrix, PredictionSet};
use crate::region::{AnatomicalRegion, NUM_REGIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Pending,
    Decided,
}

/// A record whose prediction disagrees with its archive label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCandidate {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<PathBuf>,
    pub archive_label: AnatomicalRegion,
    pub predicted: AnatomicalRegion,
    pub confidence: f64,
    pub probabilities: [f64; NUM_REGIONS],
    pub status: CandidateStatus,
}

impl AuditCandidate {
    /// The `k` most probable regions, highest first.
    pub fn top_k(&self, k: usize) -> Vec<(AnatomicalRegion, f64)> {
        let mut ranked: Vec<(AnatomicalRegion, f64)> = AnatomicalRegion::ALL.iter().map(|r| (*r, self.probabilities[r.code()])).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked
    }
}

/// One candidate per disagreement, most confident first (ties by id).
pub fn flag_mismatches(pred: &PredictionSet) -> Vec<AuditCandidate> {
    let mut out: Vec<AuditCandidate> = pred
        .records
        .iter()
        .filter(|r| !r.is_correct())
        .map(|r| AuditCandidate {
            id: r.id.clone(),
            image_ref: None,
            archive_label: r.archive_label,
            predicted: r.predicted,
            confidence: r.confidence(),
            probabilities: r.probabilities,
            status: CandidateStatus::Pending,
        })
        .collect();
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then_with(|| a.id.cmp(&b.id)));
    out
}

/// Fills in image paths from the dataset index.
pub fn attach_image_refs(candidates: &mut [AuditCandidate], index: &DatasetIndex) {
    for c in candidates {
        c.image_ref = index.get(&c.id).map(|r| r.image_ref.clone());
    }
}

pub fn write_candidates(path: &Path, candidates: &[AuditCandidate]) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(candidates)?)?;
    Ok(())
}

pub fn read_candidates(path: &Path) -> Result<Vec<AuditCandidate>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// A reviewer's ruling on a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "target", rename_all = "snake_case")]
pub enum Decision {
    ArchiveCorrect,
    Relabel(AnatomicalRegion),
    OutOfDomain,
    Unusable,
}

impl Decision {
    pub fn excludes(self) -> bool {
        matches!(self, Decision::OutOfDomain | Decision::Unusable)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub candidate_id: String,
    #[serde(flatten)]
    pub decision: Decision,
    pub reviewer: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl Verdict {
    pub fn new(candidate_id: impl Into<String>, decision: Decision, reviewer: impl Into<String>) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Verdict {
            candidate_id: candidate_id.into(),
            decision,
            reviewer: reviewer.into(),
            timestamp,
        }
    }

    /// Same ruling by the same reviewer, regardless of time.
    pub fn same_ruling(&self, other: &Verdict) -> bool {
        self.candidate_id == other.candidate_id && self.decision == other.decision && self.reviewer == other.reviewer
    }
}

/// Checks a verdict against the candidate it refers to.
pub fn validate_verdict(verdict: &Verdict, candidate: &AuditCandidate) -> Result<()> {
    match verdict.decision {
        Decision::Relabel(target) if target == candidate.archive_label => Err(Error::InvalidVerdict(format!(
            "relabel target {target} equals the archive label of `{}`",
            candidate.id
        ))),
        _ if verdict.reviewer.trim().is_empty() => Err(Error::InvalidVerdict("reviewer id is empty".into())),
        _ => Ok(()),
    }
}

/// Append-only verdict history; the last verdict per candidate is active.
#[derive(Debug, Clone, Default)]
pub struct VerdictLedger {
    path: Option<PathBuf>,
    entries: Vec<Verdict>,
}

impl VerdictLedger {
    pub fn in_memory() -> Self {
        VerdictLedger::default()
    }

    /// Opens (or starts) a JSONL ledger file.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        if path.exists() {
            for (i, line) in BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                entries.push(serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
                    line: i + 1,
                    reason: e.to_string(),
                })?);
            }
        }
        Ok(VerdictLedger {
            path: Some(path.to_path_buf()),
            entries,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn entries(&self) -> &[Verdict] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Active verdict per candidate.
    pub fn active(&self) -> BTreeMap<&str, &Verdict> {
        let mut out = BTreeMap::new();
        for v in &self.entries {
            out.insert(v.candidate_id.as_str(), v);
        }
        out
    }

    pub fn active_for(&self, id: &str) -> Option<&Verdict> {
        self.entries.iter().rev().find(|v| v.candidate_id == id)
    }

    /// Appends `verdict` unless it repeats the candidate's active ruling.
    /// Returns whether the ledger grew.
    pub fn record_verdict(&mut self, candidates: &[AuditCandidate], verdict: Verdict) -> Result<bool> {
        let candidate = candidates
            .iter()
            .find(|c| c.id == verdict.candidate_id)
            .ok_or_else(|| Error::UnknownCandidate(verdict.candidate_id.clone()))?;
        validate_verdict(&verdict, candidate)?;
        if self.active_for(&verdict.candidate_id).is_some_and(|a| a.same_ruling(&verdict)) {
            return Ok(false);
        }
        if let Some(path) = &self.path {
            let mut line = serde_json::to_vec(&verdict)?;
            line.push(b'\n');
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
            f.write_all(&line)?;
            f.sync_data()?;
        }
        self.entries.push(verdict);
        Ok(true)
    }

    /// Candidates with their status derived from this ledger.
    pub fn with_status(&self, candidates: &[AuditCandidate]) -> Vec<AuditCandidate> {
        let active = self.active();
        candidates
            .iter()
            .map(|c| AuditCandidate {
                status: if active.contains_key(c.id.as_str()) { CandidateStatus::Decided } else { CandidateStatus::Pending },
                ..c.clone()
            })
            .collect()
    }
}

/// Accuracy before and after applying verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedEvaluation {
    pub original: AccuracyReport,
    pub corrected: AccuracyReport,
    pub confusion_before: ConfusionMatrix,
    pub confusion_after: ConfusionMatrix,
    pub delta: ConfusionDelta,
    pub relabeled: usize,
    pub relabeled_to_prediction: usize,
    pub excluded: usize,
}

/// Applies one active verdict per candidate: relabels replace the reference
/// label, out-of-domain and unusable records leave the denominator, and
/// predictions never change.
pub fn apply_verdicts<'a>(pred: &PredictionSet, verdicts: impl IntoIterator<Item = &'a Verdict>) -> Result<CorrectedEvaluation> {
    let positions: HashMap<&str, usize> = pred.records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let mut active: BTreeMap<&str, &Verdict> = BTreeMap::new();
    for v in verdicts {
        let &i = positions.get(v.candidate_id.as_str()).ok_or_else(|| Error::UnknownCandidate(v.candidate_id.clone()))?;
        if pred.records[i].is_correct() {
            return Err(Error::VerdictForUnflaggedRecord(v.candidate_id.clone()));
        }
        if let Decision::Relabel(t) = v.decision {
            if t == pred.records[i].archive_label {
                return Err(Error::InvalidVerdict(format!("relabel target {t} equals the archive label of `{}`", v.candidate_id)));
            }
        }
        active.insert(v.candidate_id.as_str(), v);
    }
    let before = archive_confusion(pred);
    let mut after = ConfusionMatrix::zeros(NUM_REGIONS);
    let (mut relabeled, mut relabeled_to_prediction, mut excluded) = (0, 0, 0);
    for r in &pred.records {
        let reference = match active.get(r.id.as_str()).map(|v| v.decision) {
            Some(d) if d.excludes() => {
                excluded += 1;
                continue;
            }
            Some(Decision::Relabel(t)) => {
                relabeled += 1;
                relabeled_to_prediction += usize::from(t == r.predicted);
                t
            }
            _ => r.archive_label,
        };
        after.add(reference.code(), r.predicted.code());
    }
    Ok(CorrectedEvaluation {
        original: AccuracyReport::from_confusion(&before),
        corrected: AccuracyReport::from_confusion(&after),
        delta: cm_delta(&after, &before)?,
        confusion_before: before,
        confusion_after: after,
        relabeled,
        relabeled_to_prediction,
        excluded,
    })
}

/// Live audit progress as served to reviewers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditMetrics {
    pub original_accuracy: f64,
    pub corrected_accuracy: f64,
    pub scored_before: u64,
    pub scored_after: u64,
    pub candidates: usize,
    pub pending: usize,
    pub decided: usize,
    pub per_region: Vec<RegionDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDelta {
    pub region: AnatomicalRegion,
    pub before: Option<f64>,
    pub after: Option<f64>,
    /// Change in correct predictions for this reference region.
    pub correct_delta: i64,
}

pub fn audit_metrics(pred: &PredictionSet, candidates: &[AuditCandidate], ledger: &VerdictLedger) -> Result<AuditMetrics> {
    let active = ledger.active();
    let eval = apply_verdicts(pred, active.values().copied())?;
    let decided = candidates.iter().filter(|c| active.contains_key(c.id.as_str())).count();
    let per_region = eval
        .original
        .per_region
        .iter()
        .zip(&eval.corrected.per_region)
        .map(|(b, a)| RegionDelta {
            region: b.region,
            before: b.accuracy,
            after: a.accuracy,
            correct_delta: a.correct as i64 - b.correct as i64,
        })
        .collect();
    Ok(AuditMetrics {
        original_accuracy: eval.original.accuracy,
        corrected_accuracy: eval.corrected.accuracy,
        scored_before: eval.original.total,
        scored_after: eval.corrected.total,
        candidates: candidates.len(),
        pending: candidates.len() - decided,
        decided,
        per_region,
    })
}
