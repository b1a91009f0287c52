use rand::Rng;

use crate::error::{NnError, Result};
use crate::gemm::{sgemm, Mat};
use crate::{Module, Param, Pass, Tensor};

/// Fully connected layer `y = x W^T + b` with `W` stored as `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
    in_features: usize,
    out_features: usize,
    input: Option<Tensor>,
}

impl Linear {
    /// Uniform `±1/sqrt(in_features)` initialisation.
    pub fn new<R: Rng + ?Sized>(name: &str, in_features: usize, out_features: usize, bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f32).sqrt();
        let weight = (0..in_features * out_features)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = bias.then(|| {
            Param::new(
                format!("{name}.bias"),
                &[out_features],
                (0..out_features).map(|_| rng.random_range(-bound..bound)).collect(),
            )
        });
        Linear {
            weight: Param::new(format!("{name}.weight"), &[out_features, in_features], weight),
            bias,
            in_features,
            out_features,
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }
}

impl Module for Linear {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        if x.shape().len() != 2 || x.shape()[1] != self.in_features {
            return Err(NnError::ShapeMismatch {
                context: "Linear input",
                expected: vec![x.batch(), self.in_features],
                found: x.shape().to_vec(),
            });
        }
        let n = x.batch();
        let (i, o) = (self.in_features, self.out_features);
        let mut out = Tensor::zeros(&[n, o]);
        if let Some(b) = &self.bias {
            for row in out.data_mut().chunks_mut(o) {
                row.copy_from_slice(&b.value);
            }
        }
        sgemm(
            n,
            i,
            o,
            1.0,
            Mat { data: x.data(), rs: i, cs: 1 },
            Mat { data: &self.weight.value, rs: 1, cs: i },
            1.0,
            out.data_mut(),
            o,
        );
        self.input = pass.record.then(|| x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, _guided: bool) -> Result<Tensor> {
        let x = self.input.take().ok_or(NnError::NotRecorded("Linear"))?;
        let n = x.batch();
        let (i, o) = (self.in_features, self.out_features);
        crate::error::check_shape("Linear grad", &[n, o], grad.shape())?;
        if let Some(b) = self.bias.as_mut() {
            for row in grad.data().chunks(o) {
                for (bg, g) in b.grad.iter_mut().zip(row) {
                    *bg += g;
                }
            }
        }
        sgemm(
            o,
            n,
            i,
            1.0,
            Mat { data: grad.data(), rs: 1, cs: o },
            Mat { data: x.data(), rs: i, cs: 1 },
            1.0,
            &mut self.weight.grad,
            i,
        );
        let mut dx = Tensor::zeros(&[n, i]);
        sgemm(
            n,
            o,
            i,
            1.0,
            Mat { data: grad.data(), rs: o, cs: 1 },
            Mat { data: &self.weight.value, rs: i, cs: 1 },
            0.0,
            dx.data_mut(),
            i,
        );
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn forward_and_backward_match_hand_computation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::new("fc", 2, 2, true, &mut rng);
        lin.weight.value = vec![1.0, 2.0, -1.0, 0.5];
        lin.bias.as_mut().unwrap().value = vec![0.1, 0.2];
        let x = Tensor::from_vec(&[1, 2], vec![3.0, -1.0]).unwrap();
        let y = lin.forward(&x, Pass::TRAIN).unwrap();
        assert_eq!(y.data(), &[1.1, -3.3]);
        let dx = lin.backward(&Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap(), false).unwrap();
        assert_eq!(dx.data(), &[0.0, 2.5]);
        assert_eq!(lin.weight.grad, vec![3.0, -1.0, 3.0, -1.0]);
        assert_eq!(lin.bias.as_ref().unwrap().grad, vec![1.0, 1.0]);
    }
}
