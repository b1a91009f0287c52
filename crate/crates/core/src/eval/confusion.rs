use std::collections::HashMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::PredictionSet;
use crate::region::{AnatomicalRegion, NUM_REGIONS};

/// Square count matrix; rows are reference labels, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, reference: usize, predicted: usize) -> u64 {
        self.counts[reference * self.classes + predicted]
    }

    pub fn add(&mut self, reference: usize, predicted: usize) {
        self.counts[reference * self.classes + predicted] += 1;
    }

    pub fn row(&self, reference: usize) -> &[u64] {
        &self.counts[reference * self.classes..(reference + 1) * self.classes]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    /// `trace / total` (zero for an empty matrix).
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    /// Recall of each reference class, `None` for classes without records.
    pub fn per_class_recall(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|i| {
                let n: u64 = self.row(i).iter().sum();
                (n > 0).then(|| self.get(i, i) as f64 / n as f64)
            })
            .collect()
    }

    /// Heatmap with one square per cell, shaded by the row-normalised count.
    pub fn to_png(&self, path: &Path) -> Result<()> {
        const CELL: u32 = 24;
        let n = self.classes as u32;
        let mut img = RgbImage::from_pixel(n * CELL + 1, n * CELL + 1, Rgb([255, 255, 255]));
        for r in 0..self.classes {
            let row_total = self.row(r).iter().sum::<u64>().max(1) as f64;
            for c in 0..self.classes {
                let v = self.get(r, c) as f64 / row_total;
                let shade = (255.0 * (1.0 - v)).round() as u8;
                fill_cell(&mut img, r as u32, c as u32, CELL, Rgb([shade, shade, 255]));
            }
        }
        img.save(path)?;
        Ok(())
    }
}

/// Signed difference of two confusion matrices of the same size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionDelta {
    classes: usize,
    values: Vec<i64>,
}

impl ConfusionDelta {
    pub fn get(&self, reference: usize, predicted: usize) -> i64 {
        self.values[reference * self.classes + predicted]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn sum(&self) -> i64 {
        self.values.iter().sum()
    }

    pub fn diagonal_sum(&self) -> i64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0)
    }

    /// Diverging heatmap: blue for gains, red for losses, scaled by the
    /// largest magnitude.
    pub fn to_png(&self, path: &Path) -> Result<()> {
        const CELL: u32 = 24;
        let n = self.classes as u32;
        let max = self.values.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0).max(1) as f64;
        let mut img = RgbImage::from_pixel(n * CELL + 1, n * CELL + 1, Rgb([255, 255, 255]));
        for r in 0..self.classes {
            for c in 0..self.classes {
                let v = self.get(r, c) as f64 / max;
                let fade = (255.0 * (1.0 - v.abs())).round() as u8;
                let colour = if v >= 0.0 { Rgb([fade, fade, 255]) } else { Rgb([255, fade, fade]) };
                fill_cell(&mut img, r as u32, c as u32, CELL, colour);
            }
        }
        img.save(path)?;
        Ok(())
    }
}

fn fill_cell(img: &mut RgbImage, row: u32, col: u32, cell: u32, colour: Rgb<u8>) {
    for y in 0..cell {
        for x in 0..cell {
            let edge = x == 0 || y == 0;
            img.put_pixel(col * cell + x, row * cell + y, if edge { Rgb([200, 200, 200]) } else { colour });
        }
    }
}

/// `new - old`, elementwise.
pub fn cm_delta(new: &ConfusionMatrix, old: &ConfusionMatrix) -> Result<ConfusionDelta> {
    if new.classes != old.classes {
        return Err(Error::ShapeMismatch(format!("{0}x{0} vs {1}x{1} confusion matrices", new.classes, old.classes)));
    }
    Ok(ConfusionDelta {
        classes: new.classes,
        values: new.counts.iter().zip(&old.counts).map(|(a, b)| *a as i64 - *b as i64).collect(),
    })
}

/// Confusion matrix of `pred` against `reference` labels looked up by id.
pub fn confusion_matrix(pred: &PredictionSet, reference: &HashMap<String, AnatomicalRegion>) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::zeros(NUM_REGIONS);
    for r in &pred.records {
        let label = reference.get(&r.id).ok_or_else(|| Error::MissingLabel(r.id.clone()))?;
        cm.add(label.code(), r.predicted.code());
    }
    Ok(cm)
}

/// Confusion matrix against the archive labels carried by the predictions.
pub fn archive_confusion(pred: &PredictionSet) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::zeros(NUM_REGIONS);
    for r in &pred.records {
        cm.add(r.archive_label.code(), r.predicted.code());
    }
    cm
}

/// Overall and per-region top-1 accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub total: u64,
    pub correct: u64,
    pub accuracy: f64,
    /// Recall per reference region, in region-code order.
    pub per_region: Vec<RegionAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAccuracy {
    pub region: AnatomicalRegion,
    pub total: u64,
    pub correct: u64,
    pub accuracy: Option<f64>,
}

impl AccuracyReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let per_region = AnatomicalRegion::ALL
            .iter()
            .take(cm.classes())
            .map(|&region| {
                let total: u64 = cm.row(region.code()).iter().sum();
                let correct = cm.get(region.code(), region.code());
                RegionAccuracy {
                    region,
                    total,
                    correct,
                    accuracy: (total > 0).then(|| correct as f64 / total as f64),
                }
            })
            .collect();
        AccuracyReport {
            total: cm.total(),
            correct: cm.trace(),
            accuracy: cm.accuracy(),
            per_region,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["region", "total", "correct", "accuracy"])?;
        w.write_record(["overall".to_string(), self.total.to_string(), self.correct.to_string(), format!("{:.6}", self.accuracy)])?;
        for r in &self.per_region {
            let acc = r.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
            w.write_record([r.region.name().to_string(), r.total.to_string(), r.correct.to_string(), acc])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Accuracy of `pred` against its archive labels.
pub fn evaluate(pred: &PredictionSet) -> Result<AccuracyReport> {
    if pred.is_empty() {
        return Err(Error::EmptySplit(pred.model.clone()));
    }
    Ok(AccuracyReport::from_confusion(&archive_confusion(pred)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Prediction;
    use proptest::prelude::*;

    fn onehot(c: usize) -> [f64; NUM_REGIONS] {
        let mut p = [0.0; NUM_REGIONS];
        p[c] = 1.0;
        p
    }

    fn set(pairs: &[(usize, usize)]) -> PredictionSet {
        PredictionSet::new(
            "m",
            pairs
                .iter()
                .enumerate()
                .map(|(i, &(label, pred))| Prediction::from_probabilities(format!("r{i}"), AnatomicalRegion::from_code(label).unwrap(), onehot(pred)))
                .collect(),
        )
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let s = set(&[(0, 0), (3, 3), (3, 3), (13, 13)]);
        let cm = archive_confusion(&s);
        assert_eq!((cm.trace(), cm.total()), (4, 4));
        let report = evaluate(&s).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert!(report.per_region.iter().all(|r| r.accuracy.is_none_or(|a| a == 1.0)));
    }

    #[test]
    fn single_wrong_prediction_is_one_off_diagonal_entry() {
        let cm = archive_confusion(&set(&[(2, 5)]));
        assert_eq!(cm.get(2, 5), 1);
        assert_eq!(cm.trace(), 0);
        assert!(matches!(evaluate(&set(&[])), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn missing_reference_label_is_reported() {
        let s = set(&[(1, 1)]);
        assert!(matches!(confusion_matrix(&s, &HashMap::new()), Err(Error::MissingLabel(id)) if id == "r0"));
    }

    #[test]
    fn delta_of_identical_matrices_is_zero() {
        let cm = archive_confusion(&set(&[(1, 2), (4, 4)]));
        assert!(cm_delta(&cm, &cm).unwrap().is_zero());
        assert!(cm_delta(&cm, &ConfusionMatrix::zeros(3)).is_err());
    }

    #[test]
    fn pngs_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let cm = archive_confusion(&set(&[(1, 2), (4, 4)]));
        cm.to_png(&dir.path().join("cm.png")).unwrap();
        cm_delta(&cm, &ConfusionMatrix::zeros(14)).unwrap().to_png(&dir.path().join("delta.png")).unwrap();
        evaluate(&set(&[(1, 2)])).unwrap().write_csv(&dir.path().join("r.csv")).unwrap();
    }

    proptest! {
        #[test]
        fn accuracy_is_trace_over_total_and_delta_is_elementwise(
            a in proptest::collection::vec((0usize..14, 0usize..14), 1..200),
            b in proptest::collection::vec((0usize..14, 0usize..14), 1..200),
        ) {
            let (ca, cb) = (archive_confusion(&set(&a)), archive_confusion(&set(&b)));
            prop_assert_eq!(ca.total(), a.len() as u64);
            let correct = a.iter().filter(|(l, p)| l == p).count();
            prop_assert_eq!(evaluate(&set(&a)).unwrap().accuracy, correct as f64 / a.len() as f64);
            let d = cm_delta(&ca, &cb).unwrap();
            for r in 0..14 {
                for c in 0..14 {
                    prop_assert_eq!(d.get(r, c), ca.get(r, c) as i64 - cb.get(r, c) as i64);
                }
            }
            prop_assert_eq!(d.sum(), a.len() as i64 - b.len() as i64);
        }
    }
}
