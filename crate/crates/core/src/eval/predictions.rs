use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::region::{AnatomicalRegion, NUM_REGIONS};
use crate::train::{argmax, embed_bank, softmax, Encoder, ImageBank, LinearHead};

/// Tolerance on the sum of a stored probability vector.
pub const PROBABILITY_TOLERANCE: f64 = 1e-6;

/// Model output for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub archive_label: AnatomicalRegion,
    /// Raw head outputs; absent for ensembles and sets read from CSV.
    pub logits: Option<Vec<f64>>,
    pub probabilities: [f64; NUM_REGIONS],
    pub predicted: AnatomicalRegion,
}

impl Prediction {
    pub fn from_probabilities(id: impl Into<String>, archive_label: AnatomicalRegion, probabilities: [f64; NUM_REGIONS]) -> Self {
        let predicted = AnatomicalRegion::from_code(argmax(&probabilities)).expect("14 classes");
        Prediction {
            id: id.into(),
            archive_label,
            logits: None,
            probabilities,
            predicted,
        }
    }

    pub fn from_logits(id: impl Into<String>, archive_label: AnatomicalRegion, logits: &[f32]) -> Result<Self> {
        if logits.len() != NUM_REGIONS {
            return Err(Error::ShapeMismatch(format!("expected {NUM_REGIONS} logits, got {}", logits.len())));
        }
        let p = softmax(logits);
        let mut out = Prediction::from_probabilities(id, archive_label, p.try_into().expect("14 values"));
        out.logits = Some(logits.iter().map(|v| *v as f64).collect());
        Ok(out)
    }

    /// Probability assigned to the predicted class.
    pub fn confidence(&self) -> f64 {
        self.probabilities[self.predicted.code()]
    }

    pub fn is_correct(&self) -> bool {
        self.predicted == self.archive_label
    }
}

/// Predictions of one model (or ensemble) over a split.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub model: String,
    pub records: Vec<Prediction>,
}

fn prob_column(region: AnatomicalRegion) -> String {
    format!("p_{}", region.name())
}

impl PredictionSet {
    pub fn new(model: impl Into<String>, records: Vec<Prediction>) -> Self {
        PredictionSet {
            model: model.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Prediction> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Runs `encoder` and `head` over the bank; archive labels come from the
    /// bank.
    pub fn from_model(model: impl Into<String>, encoder: &mut Encoder, head: &mut LinearHead, bank: &ImageBank) -> Result<Self> {
        let set = embed_bank(encoder, bank)?;
        let logits = head.logits(set.primary())?;
        let records = (0..bank.len())
            .map(|i| Prediction::from_logits(bank.id(i), bank.label(i), logits.item(i)))
            .collect::<Result<_>>()?;
        Ok(PredictionSet::new(model, records))
    }

    /// Columns `id, label, p_<region> x 14, prediction`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend(AnatomicalRegion::ALL.iter().map(|r| prob_column(*r)));
        header.push("prediction".into());
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.id.clone(), r.archive_label.name().to_string()];
            row.extend(r.probabilities.iter().map(|p| format!("{p:.17e}")));
            row.push(r.predicted.name().to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`PredictionSet::write_csv`]. The stored
    /// prediction must equal the argmax of the stored probabilities.
    pub fn read_csv(path: &Path, model: impl Into<String>) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let column = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::MalformedRow {
                line: 1,
                reason: format!("missing column {name}"),
            })
        };
        let id_col = column("id")?;
        let label_col = column("label")?;
        let pred_col = column("prediction")?;
        let prob_cols = AnatomicalRegion::ALL.map(|r| column(&prob_column(r)));
        let mut records = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let line = i + 2;
            let bad = |reason: String| Error::MalformedRow { line, reason };
            let row = row.map_err(|e| bad(e.to_string()))?;
            let field = |c: usize| row.get(c).ok_or_else(|| bad(format!("missing field {c}")));
            let mut p = [0.0; NUM_REGIONS];
            for (slot, col) in p.iter_mut().zip(&prob_cols) {
                let col = *col.as_ref().map_err(|e| bad(e.to_string()))?;
                *slot = field(col)?.parse().map_err(|e| bad(format!("{e}")))?;
            }
            let label: AnatomicalRegion = field(label_col)?.parse().map_err(|e: Error| bad(e.to_string()))?;
            let stored: AnatomicalRegion = field(pred_col)?.parse().map_err(|e: Error| bad(e.to_string()))?;
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > PROBABILITY_TOLERANCE || p.iter().any(|v| !(*v >= 0.0)) {
                return Err(bad(format!("probabilities sum to {sum}")));
            }
            let pred = Prediction::from_probabilities(field(id_col)?, label, p);
            if pred.predicted != stored {
                return Err(bad(format!("prediction {stored} is not the argmax {}", pred.predicted)));
            }
            records.push(pred);
        }
        Ok(PredictionSet::new(model, records))
    }
}

/// Softmax-sum ensemble: per record, the members' probability vectors are
/// added and the class with the highest sum (lowest code on ties) is
/// chosen. Reported probabilities are the sum divided by the member count.
/// Each class sum is taken over sorted values so that member order cannot
/// change the result. Records follow the order of the first member.
pub fn ensemble_predict(members: &[PredictionSet]) -> Result<PredictionSet> {
    if members.len() < 2 {
        return Err(Error::InvalidConfig(format!("an ensemble needs at least 2 members, got {}", members.len())));
    }
    let first = &members[0];
    let lookups: Vec<HashMap<&str, &Prediction>> = members[1..]
        .iter()
        .map(|m| m.records.iter().map(|r| (r.id.as_str(), r)).collect())
        .collect();
    for (m, lookup) in members[1..].iter().zip(&lookups) {
        if m.len() != first.len() || lookup.len() != m.len() {
            return Err(Error::IdMismatch(format!("`{}` has {} records, `{}` has {}", first.model, first.len(), m.model, m.len())));
        }
    }
    let mut records = Vec::with_capacity(first.len());
    for r in &first.records {
        let mut rows = vec![&r.probabilities];
        for (m, lookup) in members[1..].iter().zip(&lookups) {
            let other = lookup
                .get(r.id.as_str())
                .ok_or_else(|| Error::IdMismatch(format!("`{}` lacks record `{}`", m.model, r.id)))?;
            rows.push(&other.probabilities);
        }
        let sum: [f64; NUM_REGIONS] = std::array::from_fn(|c| {
            let mut column: Vec<f64> = rows.iter().map(|p| p[c]).collect();
            column.sort_by(f64::total_cmp);
            column.iter().sum()
        });
        let predicted = AnatomicalRegion::from_code(argmax(&sum)).expect("14 classes");
        let k = members.len() as f64;
        records.push(Prediction {
            id: r.id.clone(),
            archive_label: r.archive_label,
            logits: None,
            probabilities: sum.map(|s| s / k),
            predicted,
        });
    }
    let name = members.iter().map(|m| m.model.as_str()).collect::<Vec<_>>().join("+");
    Ok(PredictionSet::new(name, records))
}
