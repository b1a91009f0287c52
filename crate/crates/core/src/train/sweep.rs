use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::{
    embed_augmented, embed_bank, fit_linear_head, head_accuracy, subsample_indices, train_supervised_baseline, EmbeddingSet,
    EncoderCheckpoint, ImageBank, TrainConfig,
};

/// Reference points of the full-scale study (documentation only).
pub const REFERENCE_SIMCLR_ONE_PERCENT: f64 = 0.922;
pub const REFERENCE_BASELINE_ONE_PERCENT: f64 = 0.571;

/// Embeddings of one frozen encoder, computed once and reused by every
/// fraction and seed of a sweep.
#[derive(Debug, Clone)]
pub struct ProbeData {
    pub train: EmbeddingSet,
    pub val: EmbeddingSet,
    pub test: EmbeddingSet,
}

impl ProbeData {
    pub fn new(checkpoint: &mut EncoderCheckpoint, train: &ImageBank, val: &ImageBank, test: &ImageBank, config: &TrainConfig) -> Result<Self> {
        let encoder = &mut checkpoint.encoder;
        Ok(ProbeData {
            train: embed_augmented(encoder, train, &config.augmentation, config.embedding_copies, config.seed)?,
            val: embed_bank(encoder, val)?,
            test: embed_bank(encoder, test)?,
        })
    }
}

/// Test accuracy of one (method, fraction, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: String,
    pub fraction: f64,
    pub seed: u64,
    pub labeled: usize,
    pub accuracy: f64,
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub method: String,
    pub fraction: f64,
    pub runs: usize,
    pub mean: f64,
    pub sd: f64,
}

fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() || fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(format!("fractions must be non-empty and strictly ascending, got {fractions:?}")));
    }
    Ok(())
}

/// Linear evaluation of a frozen encoder at each label fraction and seed.
pub fn probe_sweep(method: &str, data: &ProbeData, fractions: &[f64], seeds: &[u64], config: &TrainConfig) -> Result<Vec<SweepCell>> {
    check_fractions(fractions)?;
    let mut cells = Vec::new();
    for &fraction in fractions {
        for &seed in seeds {
            let picked = subsample_indices(&data.train.labels, fraction, seed)?;
            let run = TrainConfig { seed, ..config.clone() };
            let mut outcome = fit_linear_head(&data.train.subset(&picked), Some(&data.val), &run)?;
            cells.push(SweepCell {
                method: method.to_string(),
                fraction,
                seed,
                labeled: picked.len(),
                accuracy: head_accuracy(&mut outcome.head, &data.test)?,
            });
        }
    }
    Ok(cells)
}

/// Supervised-from-scratch runs on the same labelled subsets.
pub fn baseline_sweep(
    train: &ImageBank,
    val: &ImageBank,
    test: &ImageBank,
    fractions: &[f64],
    seeds: &[u64],
    config: &TrainConfig,
) -> Result<Vec<SweepCell>> {
    check_fractions(fractions)?;
    let mut cells = Vec::new();
    for &fraction in fractions {
        for &seed in seeds {
            let picked = subsample_indices(train.labels(), fraction, seed)?;
            let run = TrainConfig { seed, ..config.clone() };
            let mut out = train_supervised_baseline(&train.subset(&picked), Some(val), &run)?;
            let set = embed_bank(&mut out.checkpoint.encoder, test)?;
            cells.push(SweepCell {
                method: "supervised".into(),
                fraction,
                seed,
                labeled: picked.len(),
                accuracy: head_accuracy(&mut out.head, &set)?,
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn new(cells: Vec<SweepCell>) -> Self {
        SweepTable { cells }
    }

    /// One row per (method, fraction), methods in first-seen order.
    pub fn summary(&self) -> Vec<SweepSummary> {
        let mut methods: Vec<&str> = Vec::new();
        let mut groups: BTreeMap<(usize, u64), Vec<f64>> = BTreeMap::new();
        for c in &self.cells {
            let m = methods.iter().position(|&m| m == c.method).unwrap_or_else(|| {
                methods.push(&c.method);
                methods.len() - 1
            });
            groups.entry((m, c.fraction.to_bits())).or_default().push(c.accuracy);
        }
        let mut rows: Vec<SweepSummary> = groups
            .into_iter()
            .map(|((m, f), acc)| {
                let n = acc.len() as f64;
                let mean = acc.iter().sum::<f64>() / n;
                let var = if acc.len() > 1 { acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
                SweepSummary {
                    method: methods[m].to_string(),
                    fraction: f64::from_bits(f),
                    runs: acc.len(),
                    mean,
                    sd: var.sqrt(),
                }
            })
            .collect();
        rows.sort_by(|a, b| {
            let pos = |s: &SweepSummary| methods.iter().position(|&m| m == s.method);
            pos(a).cmp(&pos(b)).then(a.fraction.total_cmp(&b.fraction))
        });
        rows
    }

    /// Per-run and summary tables (`<stem>.csv`, `<stem>-summary.csv`).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for c in &self.cells {
            w.serialize(c)?;
        }
        w.flush()?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
        let mut w = csv::Writer::from_path(path.with_file_name(format!("{stem}-summary.csv")))?;
        for s in self.summary() {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_svg(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_svg())?;
        Ok(())
    }

    /// Accuracy against label fraction on a logarithmic axis, one line per
    /// method with one-sd error bars.
    pub fn to_svg(&self) -> String {
        const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
        let (w, h, left, right, top, bottom) = (640.0, 420.0, 60.0, 150.0, 20.0, 50.0);
        let rows = self.summary();
        let fr: Vec<f64> = rows.iter().map(|r| r.fraction.log10()).collect();
        let (lo, hi) = fr.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let (lo, hi) = if rows.is_empty() { (-2.0, 0.0) } else if hi - lo < 1e-9 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        let x = |f: f64| left + (f.log10() - lo) / (hi - lo) * (w - left - right);
        let y = |a: f64| top + (1.0 - a) * (h - top - bottom);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        for tick in 0..=10 {
            let a = tick as f64 / 10.0;
            let _ = writeln!(
                s,
                r##"<line x1="{left}" y1="{0:.1}" x2="{1}" y2="{0:.1}" stroke="#ddd"/><text x="{2}" y="{3:.1}" text-anchor="end">{4}%</text>"##,
                y(a),
                w - right,
                left - 6.0,
                y(a) + 4.0,
                tick * 10
            );
        }
        let mut fractions: Vec<f64> = rows.iter().map(|r| r.fraction).collect();
        fractions.sort_by(f64::total_cmp);
        fractions.dedup();
        for f in &fractions {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{}" text-anchor="middle">{}%</text>"#,
                x(*f),
                h - bottom + 18.0,
                f * 100.0
            );
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">labelled fraction</text>"#, (left + w - right) / 2.0, h - 8.0);
        let _ = writeln!(s, r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">test accuracy</text>"#, h / 2.0, h / 2.0);
        let mut methods: Vec<&str> = Vec::new();
        for r in &rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        for (k, m) in methods.iter().enumerate() {
            let colour = COLOURS[k % COLOURS.len()];
            let pts: Vec<&SweepSummary> = rows.iter().filter(|r| r.method == *m).collect();
            let line: Vec<String> = pts.iter().map(|r| format!("{:.1},{:.1}", x(r.fraction), y(r.mean))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#, line.join(" "));
            for r in &pts {
                let (cx, lo_y, hi_y) = (x(r.fraction), y((r.mean - r.sd).max(0.0)), y((r.mean + r.sd).min(1.0)));
                let _ = writeln!(
                    s,
                    r#"<line x1="{cx:.1}" y1="{lo_y:.1}" x2="{cx:.1}" y2="{hi_y:.1}" stroke="{colour}"/><circle cx="{cx:.1}" cy="{:.1}" r="3" fill="{colour}"/>"#,
                    y(r.mean)
                );
            }
            let ly = top + 20.0 * k as f64 + 10.0;
            let _ = writeln!(
                s,
                r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{2}" y="{3}">{m}</text>"#,
                w - right + 10.0,
                w - right + 30.0,
                w - right + 36.0,
                ly + 4.0
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
