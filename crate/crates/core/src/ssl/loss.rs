//! Losses are evaluated in f64 and return the gradient with respect to the
//! raw (unnormalised) projections.

use crate::error::{Error, Result};

/// Rows with a norm below this are rejected.
pub const NORM_EPS: f64 = 1e-12;

/// Row-major `rows x dim` matrix of projection vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Projections {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::ShapeMismatch(format!("{rows}x{dim} projections need {} values, got {}", rows * dim, data.len())));
        }
        Ok(Projections { rows, dim, data })
    }

    pub fn from_f32(rows: usize, dim: usize, data: &[f32]) -> Result<Self> {
        Self::new(rows, dim, data.iter().map(|v| *v as f64).collect())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Unit rows and the original norms.
    fn normalized(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut unit = self.data.clone();
        let mut norms = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let row = &mut unit[i * self.dim..(i + 1) * self.dim];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n >= NORM_EPS) {
                return Err(Error::DegenerateProjection(i));
            }
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Ok((unit, norms))
    }
}

/// Loss value with its gradient, laid out like the input projections.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// `2N` projections with a fixed-point-free pairing and a temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub projections: Projections,
    pub pairing: Vec<usize>,
    pub temperature: f64,
}

impl ContrastiveBatch {
    pub fn new(projections: Projections, pairing: Vec<usize>, temperature: f64) -> Result<Self> {
        let m = projections.rows;
        if m < 2 || m % 2 != 0 {
            return Err(Error::ShapeMismatch(format!("contrastive batch needs an even number (>= 2) of views, got {m}")));
        }
        if pairing.len() != m || pairing.iter().enumerate().any(|(i, &j)| j >= m || j == i || pairing[j] != i) {
            return Err(Error::InvalidConfig("pairing must be a fixed-point-free involution over the views".into()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature must be positive, got {temperature}")));
        }
        Ok(ContrastiveBatch {
            projections,
            pairing,
            temperature,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarities over temperature, and row-wise softmax over `k != i`.
fn similarity_softmax(unit: &[f64], m: usize, dim: usize, tau: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut s = vec![0.0; m * m];
    for i in 0..m {
        for k in i..m {
            let v = dot(&unit[i * dim..(i + 1) * dim], &unit[k * dim..(k + 1) * dim]) / tau;
            s[i * m + k] = v;
            s[k * m + i] = v;
        }
    }
    let mut p = vec![0.0; m * m];
    let mut log_denom = vec![0.0; m];
    for i in 0..m {
        let row = &s[i * m..(i + 1) * m];
        let max = (0..m).filter(|&k| k != i).map(|k| row[k]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..m).filter(|&k| k != i).map(|k| (row[k] - max).exp()).sum();
        log_denom[i] = max + sum.ln();
        for k in (0..m).filter(|&k| k != i) {
            p[i * m + k] = (row[k] - log_denom[i]).exp();
        }
    }
    (s, p, log_denom)
}

/// Back-propagates a gradient on unit rows to the raw rows.
fn through_normalization(unit: &[f64], norms: &[f64], dim: usize, mut du: Vec<f64>) -> Vec<f64> {
    for (i, n) in norms.iter().enumerate() {
        let u = &unit[i * dim..(i + 1) * dim];
        let g = &mut du[i * dim..(i + 1) * dim];
        let proj = dot(u, g);
        for (gv, uv) in g.iter_mut().zip(u) {
            *gv = (*gv - uv * proj) / n;
        }
    }
    du
}

/// Shared core for the two contrastive losses. `positives[i]` lists the
/// positives of anchor `i`; anchors with none are skipped.
fn contrastive(p: &Projections, positives: &[Vec<usize>], tau: f64) -> Result<LossGrad> {
    let (m, dim) = (p.rows, p.dim);
    let (unit, norms) = p.normalized()?;
    let (s, prob, log_denom) = similarity_softmax(&unit, m, dim, tau);
    let anchors = positives.iter().filter(|v| !v.is_empty()).count();
    if anchors == 0 {
        return Err(Error::NoPositivesAnywhere);
    }
    let scale = 1.0 / anchors as f64;
    let mut loss = 0.0;
    // coef[i][k]: weight of unit row k in d(loss)/d(unit row i), before 1/tau.
    let mut coef = vec![0.0; m * m];
    for (i, pos) in positives.iter().enumerate() {
        if pos.is_empty() {
            continue;
        }
        let w = 1.0 / pos.len() as f64;
        let mean_pos: f64 = pos.iter().map(|&q| s[i * m + q]).sum::<f64>() * w;
        loss += log_denom[i] - mean_pos;
        for k in 0..m {
            let pk = prob[i * m + k];
            coef[i * m + k] += pk * scale;
            coef[k * m + i] += pk * scale;
        }
        for &q in pos {
            coef[i * m + q] -= w * scale;
            coef[q * m + i] -= w * scale;
        }
    }
    let mut du = vec![0.0; m * dim];
    for i in 0..m {
        let gi = &mut du[i * dim..(i + 1) * dim];
        for k in 0..m {
            let c = coef[i * m + k];
            if c != 0.0 {
                let uk = &unit[k * dim..(k + 1) * dim];
                for (g, u) in gi.iter_mut().zip(uk) {
                    *g += c * u / tau;
                }
            }
        }
    }
    Ok(LossGrad {
        loss: loss * scale,
        grad: through_normalization(&unit, &norms, dim, du),
    })
}

/// Normalised temperature-scaled cross entropy, averaged over all views.
/// The denominator runs over every view except the anchor itself, so it
/// includes the positive.
pub fn nt_xent_grad(batch: &ContrastiveBatch) -> Result<LossGrad> {
    let positives: Vec<Vec<usize>> = batch.pairing.iter().map(|&j| vec![j]).collect();
    contrastive(&batch.projections, &positives, batch.temperature)
}

pub fn nt_xent(batch: &ContrastiveBatch) -> Result<f64> {
    nt_xent_grad(batch).map(|g| g.loss)
}

/// Supervised contrastive loss with one label per view: every other view
/// with the same label is a positive.
pub fn supcon_loss_grad<L: PartialEq>(projections: &Projections, labels: &[L], temperature: f64) -> Result<LossGrad> {
    let m = projections.rows;
    if labels.len() != m {
        return Err(Error::ShapeMismatch(format!("{m} views but {} labels", labels.len())));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {temperature}")));
    }
    let positives: Vec<Vec<usize>> = (0..m).map(|i| (0..m).filter(|&k| k != i && labels[k] == labels[i]).collect()).collect();
    contrastive(projections, &positives, temperature)
}

pub fn supcon_loss<L: PartialEq>(projections: &Projections, labels: &[L], temperature: f64) -> Result<f64> {
    supcon_loss_grad(projections, labels, temperature).map(|g| g.loss)
}

/// Mean over rows of `|q/|q| - z/|z||^2`; the gradient is with respect to
/// `prediction` only.
pub fn byol_loss_grad(prediction: &Projections, target: &Projections) -> Result<LossGrad> {
    if prediction.rows != target.rows || prediction.dim != target.dim {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs target {}x{}",
            prediction.rows, prediction.dim, target.rows, target.dim
        )));
    }
    let (q, qn) = prediction.normalized()?;
    let (z, _) = target.normalized()?;
    let rows = prediction.rows.max(1) as f64;
    let mut loss = 0.0;
    let mut du = vec![0.0; q.len()];
    for ((g, a), b) in du.iter_mut().zip(&q).zip(&z) {
        loss += (a - b) * (a - b);
        *g = 2.0 * (a - b) / rows;
    }
    Ok(LossGrad {
        loss: loss / rows,
        grad: through_normalization(&q, &qn, prediction.dim, du),
    })
}

pub fn byol_loss(prediction: &Projections, target: &Projections) -> Result<f64> {
    byol_loss_grad(prediction, target).map(|g| g.loss)
}

/// Average of the two view-swapped terms, with gradients for both online
/// predictions.
pub fn byol_symmetric(q1: &Projections, z2: &Projections, q2: &Projections, z1: &Projections) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let a = byol_loss_grad(q1, z2)?;
    let b = byol_loss_grad(q2, z1)?;
    let half = |g: Vec<f64>| g.into_iter().map(|v| v * 0.5).collect();
    Ok(((a.loss + b.loss) / 2.0, half(a.grad), half(b.grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssl::standard_pairing;

    fn batch(data: Vec<f64>, dim: usize, tau: f64) -> ContrastiveBatch {
        let rows = data.len() / dim;
        ContrastiveBatch::new(Projections::new(rows, dim, data).unwrap(), standard_pairing(rows / 2), tau).unwrap()
    }

    #[test]
    fn single_pair_has_zero_loss() {
        assert_eq!(nt_xent(&batch(vec![1.0, 2.0, -3.0, 0.5], 2, 0.1)).unwrap(), 0.0);
    }

    #[test]
    fn two_pairs_of_basis_vectors() {
        // rows: e1, e2, e1, e2 with pairs (0,2), (1,3)
        let b = batch(vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0], 2, 0.5);
        let expected = (1.0 + 2.0 * (-2.0f64).exp()).ln();
        assert!((nt_xent(&b).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.239545).abs() < 1e-6);
    }

    #[test]
    fn supcon_with_one_class_and_identical_rows() {
        let n = 3;
        let p = Projections::new(2 * n, 2, vec![0.6, 0.8].repeat(2 * n)).unwrap();
        let loss = supcon_loss(&p, &vec![0u8; 2 * n], 0.1).unwrap();
        assert!((loss - ((2 * n - 1) as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn byol_reference_values() {
        let q = Projections::new(1, 2, vec![2.0, 0.0]).unwrap();
        for (z, want) in [([3.0, 0.0], 0.0), ([0.0, 1.0], 2.0), ([-1.0, 0.0], 4.0)] {
            let z = Projections::new(1, 2, z.to_vec()).unwrap();
            assert!((byol_loss(&q, &z).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        let p = Projections::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = ContrastiveBatch::new(p.clone(), vec![1, 0], 0.5).unwrap();
        assert!(matches!(nt_xent(&b), Err(Error::DegenerateProjection(1))));
        assert!(ContrastiveBatch::new(p.clone(), vec![0, 1], 0.5).is_err());
        assert!(ContrastiveBatch::new(p.clone(), vec![1, 0], 0.0).is_err());
        let q = Projections::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(supcon_loss(&q, &[0, 1], 0.1), Err(Error::NoPositivesAnywhere)));
    }
}
