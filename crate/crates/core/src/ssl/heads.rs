use radreg_nn::{Mlp, Module, Pass, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Widths of the projection and prediction perceptrons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden: usize,
    pub output: usize,
}

impl HeadConfig {
    pub const SIMCLR: HeadConfig = HeadConfig { hidden: 512, output: 128 };
    pub const BYOL: HeadConfig = HeadConfig { hidden: 512, output: 128 };
}

fn run(head: &mut Mlp, x: &Tensor, pass: Pass) -> Result<Tensor> {
    let width = x.shape().get(1).copied().unwrap_or(0);
    if x.shape().len() != 2 || width != head.input_width() {
        return Err(Error::ShapeMismatch(format!(
            "head expects [batch, {}], got {:?}",
            head.input_width(),
            x.shape()
        )));
    }
    Ok(head.forward(x, pass)?)
}

/// Embedding to projection: linear, batch norm, rectifier, linear.
pub fn project(head: &mut Mlp, embeddings: &Tensor, pass: Pass) -> Result<Tensor> {
    run(head, embeddings, pass)
}

/// Online-branch predictor with the same architecture as the projector.
pub fn predict_byol(predictor: &mut Mlp, projections: &Tensor, pass: Pass) -> Result<Tensor> {
    run(predictor, projections, pass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_head_gives_zero_projection() {
        let mut head = Mlp::new("proj", 4, 6, 3, &mut stream(1, &[]));
        for p in head.params_mut() {
            if p.is_trainable() && !p.name.ends_with("bn.gamma") {
                p.value.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let x = Tensor::from_vec(&[2, 4], vec![0.3, -1.0, 2.0, 0.5, 1.0, 1.0, -2.0, 0.1]).unwrap();
        let out = project(&mut head, &x, Pass::EVAL).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_like_head_preserves_direction() {
        let d = 3;
        let mut head = Mlp::new("proj", d, d, d, &mut stream(2, &[]));
        for p in head.params_mut() {
            match p.name.as_str() {
                "proj.fc1.weight" | "proj.fc2.weight" => {
                    for (k, v) in p.value.iter_mut().enumerate() {
                        *v = if k % (d + 1) == 0 { 1.0 } else { 0.0 };
                    }
                }
                "proj.fc1.bias" | "proj.fc2.bias" => p.value.iter_mut().for_each(|v| *v = 0.0),
                _ => {}
            }
        }
        // Positive inputs with unit running statistics pass through unchanged.
        let x = Tensor::from_vec(&[2, 3], vec![0.5, 1.0, 2.0, 1.5, 0.2, 0.7]).unwrap();
        let out = project(&mut head, &x, Pass::EVAL).unwrap();
        for (a, b) in out.data().iter().zip(x.data()) {
            assert!((a - b / (1.0f32 + 1e-5).sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_rows_identical_projections_and_width_check() {
        let mut head = Mlp::new("proj", 4, 8, 2, &mut stream(3, &[]));
        let x = Tensor::from_vec(&[2, 4], vec![0.1, 0.2, 0.3, 0.4, 0.1, 0.2, 0.3, 0.4]).unwrap();
        let out = project(&mut head, &x, Pass::EVAL).unwrap();
        assert_eq!(out.item(0), out.item(1));
        let bad = Tensor::from_vec(&[1, 3], vec![0.0; 3]).unwrap();
        assert!(matches!(predict_byol(&mut head, &bad, Pass::EVAL), Err(Error::ShapeMismatch(_))));
    }
}
