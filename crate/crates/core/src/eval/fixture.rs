//! Test-split predictions and verdicts with the counts of the published
//! label audit, so that its accuracy arithmetic can be checked exactly.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::data::ARCHIVE_SPLIT_COUNTS;
use crate::error::Result;
use crate::eval::{Decision, Prediction, PredictionSet, Verdict};
use crate::region::{AnatomicalRegion, NUM_REGIONS};
use crate::rng;

pub const FIXTURE_RECORDS: usize = 9_746;
pub const FIXTURE_MISMATCHES: usize = 328;
pub const FIXTURE_RELABELS: usize = 116;
pub const FIXTURE_RELABELS_TO_PREDICTION: usize = 98;
pub const FIXTURE_OUT_OF_DOMAIN: usize = 36;
pub const FIXTURE_UNUSABLE: usize = 2;

/// Published reference accuracies (documentation only).
pub const REFERENCE_SIMCLR_ACCURACY: f64 = 0.966;
pub const REFERENCE_SIMCLR_THORACIC_SPINE: f64 = 0.903;
pub const REFERENCE_SIMCLR_CORRECTED: f64 = 0.980;

#[derive(Debug, Clone)]
pub struct AuditFixture {
    pub predictions: PredictionSet,
    pub verdicts: Vec<Verdict>,
}

fn peaked(rng: &mut impl Rng, class: usize) -> [f64; NUM_REGIONS] {
    let confidence = rng.random_range(0.55..0.99);
    let weights: Vec<f64> = (0..NUM_REGIONS - 1).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut p = [0.0; NUM_REGIONS];
    let mut others = weights.iter();
    for (c, slot) in p.iter_mut().enumerate() {
        *slot = if c == class { confidence } else { (1.0 - confidence) * others.next().unwrap() / total };
    }
    p
}

/// Deterministic fixture: the test-split class counts of the archive, 328
/// disagreements, and 154 verdicts (116 relabels of which 98 agree with the
/// model, 36 out-of-domain, 2 unusable). The other 174 disagreements have
/// no verdict.
pub fn paper_fixture() -> AuditFixture {
    let mut rng = rng::stream(2021, &[0xf1c]);
    let labels: Vec<AnatomicalRegion> = ARCHIVE_SPLIT_COUNTS[2]
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(AnatomicalRegion::from_code(c).unwrap(), n))
        .collect();
    let mut wrong = vec![None; labels.len()];
    let mut picked = sample(&mut rng, labels.len(), FIXTURE_MISMATCHES).into_vec();
    picked.sort_unstable();
    for (j, &i) in picked.iter().enumerate() {
        wrong[i] = Some(j);
    }
    let mut records = Vec::with_capacity(labels.len());
    let mut verdicts = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        let id = format!("fx-{i:05}");
        let predicted = match wrong[i] {
            Some(j) => (label.code() + 1 + j % (NUM_REGIONS - 1)) % NUM_REGIONS,
            None => label.code(),
        };
        records.push(Prediction::from_probabilities(&id, label, peaked(&mut rng, predicted)));
        let Some(j) = wrong[i] else { continue };
        let decision = if j < FIXTURE_RELABELS_TO_PREDICTION {
            Decision::Relabel(AnatomicalRegion::from_code(predicted).unwrap())
        } else if j < FIXTURE_RELABELS {
            let third = (0..NUM_REGIONS).map(|k| (predicted + 1 + k) % NUM_REGIONS).find(|&c| c != label.code()).unwrap();
            Decision::Relabel(AnatomicalRegion::from_code(third).unwrap())
        } else if j < FIXTURE_RELABELS + FIXTURE_OUT_OF_DOMAIN {
            Decision::OutOfDomain
        } else if j < FIXTURE_RELABELS + FIXTURE_OUT_OF_DOMAIN + FIXTURE_UNUSABLE {
            Decision::Unusable
        } else {
            continue;
        };
        verdicts.push(Verdict {
            candidate_id: id,
            decision,
            reviewer: "fixture".into(),
            timestamp: 1_600_000_000_000 + j as u64,
        });
    }
    AuditFixture {
        predictions: PredictionSet::new("simclr-fixture", records),
        verdicts,
    }
}

impl AuditFixture {
    /// Writes `predictions.csv` and `verdicts.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.predictions.write_csv(&dir.join("predictions.csv"))?;
        let mut text = String::new();
        for v in &self.verdicts {
            text.push_str(&serde_json::to_string(v)?);
            text.push('\n');
        }
        std::fs::write(dir.join("verdicts.jsonl"), text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{apply_verdicts, evaluate, flag_mismatches};

    #[test]
    fn fixture_reproduces_published_counts() {
        let f = paper_fixture();
        assert_eq!(f.predictions.len(), FIXTURE_RECORDS);
        assert_eq!(flag_mismatches(&f.predictions).len(), FIXTURE_MISMATCHES);
        assert_eq!(f.verdicts.len(), 154);
        let report = evaluate(&f.predictions).unwrap();
        assert_eq!(report.correct, 9_418);
        let e = apply_verdicts(&f.predictions, &f.verdicts).unwrap();
        assert_eq!((e.corrected.correct, e.corrected.total), (9_516, 9_708));
        assert_eq!((e.relabeled, e.relabeled_to_prediction, e.excluded), (116, 98, 38));
        assert_eq!(e.delta.diagonal_sum(), 98);
        assert_eq!(format!("{:.1}", report.accuracy * 100.0), "96.6");
        assert_eq!(format!("{:.1}", e.corrected.accuracy * 100.0), "98.0");
    }
}
