use crate::error::{NnError, Result};
use crate::{Module, Param, Pass, Tensor};

const EPS: f32 = 1e-5;
const MOMENTUM: f32 = 0.1;

/// Batch normalisation over dimension 1 of an `[N, C, ...]` tensor. Works for
/// both fully connected (`[N, C]`) and convolutional (`[N, C, H, W]`) input.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    channels: usize,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    shape: Vec<usize>,
    train: bool,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: Param::new(format!("{name}.weight"), &[channels], vec![1.0; channels]),
            beta: Param::new(format!("{name}.bias"), &[channels], vec![0.0; channels]),
            running_mean: Param::buffer(format!("{name}.running_mean"), &[channels], vec![0.0; channels]),
            running_var: Param::buffer(format!("{name}.running_var"), &[channels], vec![1.0; channels]),
            channels,
            cache: None,
        }
    }

    fn layout(&self, shape: &[usize]) -> Result<(usize, usize)> {
        if shape.len() < 2 || shape[1] != self.channels {
            return Err(NnError::ShapeMismatch {
                context: "BatchNorm input",
                expected: vec![0, self.channels],
                found: shape.to_vec(),
            });
        }
        Ok((shape[0], shape[2..].iter().product()))
    }
}

impl Module for BatchNorm {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        let (n, spatial) = self.layout(x.shape())?;
        let c = self.channels;
        let m = (n * spatial) as f32;
        let xd = x.data();
        let mut out = Tensor::zeros(x.shape());
        let mut xhat = if pass.record { vec![0.0; xd.len()] } else { Vec::new() };
        let mut inv_stds = vec![0.0; c];
        for ch in 0..c {
            let (mean, var) = if pass.train {
                let mut sum = 0.0f64;
                let mut sq = 0.0f64;
                for b in 0..n {
                    for v in &xd[(b * c + ch) * spatial..][..spatial] {
                        sum += *v as f64;
                        sq += (*v as f64) * (*v as f64);
                    }
                }
                let mean = sum / m as f64;
                let var = (sq / m as f64 - mean * mean).max(0.0);
                let unbiased = if m > 1.0 { var * m as f64 / (m as f64 - 1.0) } else { var };
                let rm = &mut self.running_mean.value[ch];
                *rm = (1.0 - MOMENTUM) * *rm + MOMENTUM * mean as f32;
                let rv = &mut self.running_var.value[ch];
                *rv = (1.0 - MOMENTUM) * *rv + MOMENTUM * unbiased as f32;
                (mean as f32, var as f32)
            } else {
                (self.running_mean.value[ch], self.running_var.value[ch])
            };
            let inv_std = 1.0 / (var + EPS).sqrt();
            inv_stds[ch] = inv_std;
            let (g, bta) = (self.gamma.value[ch], self.beta.value[ch]);
            let od = out.data_mut();
            for b in 0..n {
                let base = (b * c + ch) * spatial;
                for i in base..base + spatial {
                    let h = (xd[i] - mean) * inv_std;
                    if pass.record {
                        xhat[i] = h;
                    }
                    od[i] = g * h + bta;
                }
            }
        }
        self.cache = pass.record.then(|| Cache {
            xhat,
            inv_std: inv_stds,
            shape: x.shape().to_vec(),
            train: pass.train,
        });
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, _guided: bool) -> Result<Tensor> {
        let cache = self.cache.take().ok_or(NnError::NotRecorded("BatchNorm"))?;
        crate::error::check_shape("BatchNorm grad", &cache.shape, grad.shape())?;
        let (n, spatial) = self.layout(&cache.shape)?;
        let c = self.channels;
        let m = (n * spatial) as f32;
        let gd = grad.data();
        let mut dx = Tensor::zeros(&cache.shape);
        for ch in 0..c {
            let mut dgamma = 0.0f32;
            let mut dbeta = 0.0f32;
            for b in 0..n {
                let base = (b * c + ch) * spatial;
                for i in base..base + spatial {
                    dgamma += gd[i] * cache.xhat[i];
                    dbeta += gd[i];
                }
            }
            self.gamma.grad[ch] += dgamma;
            self.beta.grad[ch] += dbeta;
            let scale = self.gamma.value[ch] * cache.inv_std[ch];
            let dd = dx.data_mut();
            for b in 0..n {
                let base = (b * c + ch) * spatial;
                for i in base..base + spatial {
                    dd[i] = if cache.train {
                        scale * (gd[i] - dbeta / m - cache.xhat[i] * dgamma / m)
                    } else {
                        scale * gd[i]
                    };
                }
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}
