//! Brute-force reference implementations used by the integration tests.

#![allow(dead_code)]

use rand::Rng;
use radreg_core::eval::{Prediction, PredictionSet};
use radreg_core::{AnatomicalRegion, NUM_REGIONS};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Per-view cross entropy of the partner against every other view, averaged.
pub fn nt_xent_oracle(rows: &[Vec<f64>], partner: &[usize], tau: f64) -> f64 {
    let m = rows.len();
    let mut total = 0.0;
    for i in 0..m {
        let numerator = (cosine(&rows[i], &rows[partner[i]]) / tau).exp();
        let mut denominator = 0.0;
        for k in 0..m {
            if k != i {
                denominator += (cosine(&rows[i], &rows[k]) / tau).exp();
            }
        }
        total += -(numerator / denominator).ln();
    }
    total / m as f64
}

/// Mean over anchors with at least one same-label view of the average
/// log-probability of its positives.
pub fn supcon_oracle(rows: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let m = rows.len();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..m {
        let positives: Vec<usize> = (0..m).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let mut denominator = 0.0;
        for a in 0..m {
            if a != i {
                denominator += (cosine(&rows[i], &rows[a]) / tau).exp();
            }
        }
        let mut inner = 0.0;
        for &p in &positives {
            inner += ((cosine(&rows[i], &rows[p]) / tau).exp() / denominator).ln();
        }
        total += -inner / positives.len() as f64;
    }
    total / anchors as f64
}

pub fn byol_oracle(q: &[Vec<f64>], z: &[Vec<f64>]) -> f64 {
    q.iter().zip(z).map(|(a, b)| 2.0 - 2.0 * cosine(a, b)).sum::<f64>() / q.len() as f64
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` over whole vectors.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn random_rows(rng: &mut impl Rng, rows: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

pub fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

/// Probability vectors on a 1/1024 grid, so that sums of a few of them are
/// exact in any order.
pub fn dyadic_probabilities(rng: &mut impl Rng) -> [f64; NUM_REGIONS] {
    let mut cuts: Vec<u32> = (0..NUM_REGIONS - 1).map(|_| rng.random_range(0..=1024)).collect();
    cuts.sort_unstable();
    let mut p = [0.0; NUM_REGIONS];
    let mut prev = 0;
    for (slot, cut) in p.iter_mut().zip(cuts.iter().chain(std::iter::once(&1024))) {
        *slot = (cut - prev) as f64 / 1024.0;
        prev = *cut;
    }
    p
}

pub fn random_prediction_sets(rng: &mut impl Rng, members: usize, records: usize) -> Vec<PredictionSet> {
    let labels: Vec<AnatomicalRegion> = (0..records).map(|_| AnatomicalRegion::from_code(rng.random_range(0..NUM_REGIONS)).unwrap()).collect();
    (0..members)
        .map(|m| {
            let recs = labels
                .iter()
                .enumerate()
                .map(|(i, &label)| Prediction::from_probabilities(format!("r{i}"), label, dyadic_probabilities(rng)))
                .collect();
            PredictionSet::new(format!("m{m}"), recs)
        })
        .collect()
}

/// Straightforward softmax-sum vote: per record, add the members'
/// probabilities in member order and take the first maximal class.
pub fn naive_ensemble(members: &[PredictionSet]) -> Vec<(String, usize, [f64; NUM_REGIONS])> {
    let mut out = Vec::new();
    for r in &members[0].records {
        let mut sum = [0.0; NUM_REGIONS];
        for m in members {
            let other = m.records.iter().find(|x| x.id == r.id).expect("same ids");
            for c in 0..NUM_REGIONS {
                sum[c] += other.probabilities[c];
            }
        }
        let mut best = 0;
        for c in 1..NUM_REGIONS {
            if sum[c] > sum[best] {
                best = c;
            }
        }
        let k = members.len() as f64;
        out.push((r.id.clone(), best, sum.map(|s| s / k)));
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}
