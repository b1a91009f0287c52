use crate::error::{NnError, Result};
use crate::{Module, Param, Pass, Tensor};

/// Max pooling with a square window; padding positions never win.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        MaxPool2d {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }
}

impl Module for MaxPool2d {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 4 {
            return Err(NnError::ShapeMismatch {
                context: "MaxPool2d input",
                expected: vec![0, 0, 0, 0],
                found: s.to_vec(),
            });
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0usize; n * c * oh * ow];
        let xd = x.data();
        let od = out.data_mut();
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = base;
                    for ki in 0..self.kernel {
                        let iy = (y * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..self.kernel {
                            let ix = (xo * self.stride + kj) as isize - self.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (plane * oh + y) * ow + xo;
                    od[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        self.cache = pass.record.then(|| (argmax, s.to_vec()));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, _guided: bool) -> Result<Tensor> {
        let (argmax, shape) = self.cache.take().ok_or(NnError::NotRecorded("MaxPool2d"))?;
        crate::error::check_shape("MaxPool2d grad", &[argmax.len()], &[grad.len()])?;
        let mut dx = Tensor::zeros(&shape);
        let dd = dx.data_mut();
        for (g, &idx) in grad.data().iter().zip(&argmax) {
            dd[idx] += g;
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

/// Mean over the spatial dimensions: `[N, C, H, W] -> [N, C]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool::default()
    }
}

impl Module for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 4 {
            return Err(NnError::ShapeMismatch {
                context: "GlobalAvgPool input",
                expected: vec![0, 0, 0, 0],
                found: s.to_vec(),
            });
        }
        let hw = s[2] * s[3];
        let data = x
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().sum::<f32>() / hw as f32)
            .collect();
        self.shape = pass.record.then(|| s.to_vec());
        Tensor::from_vec(&[s[0], s[1]], data)
    }

    fn backward(&mut self, grad: &Tensor, _guided: bool) -> Result<Tensor> {
        let shape = self.shape.take().ok_or(NnError::NotRecorded("GlobalAvgPool"))?;
        crate::error::check_shape("GlobalAvgPool grad", &shape[..2], grad.shape())?;
        let hw = shape[2] * shape[3];
        let data = grad
            .data()
            .iter()
            .flat_map(|g| std::iter::repeat_n(g / hw as f32, hw))
            .collect();
        Tensor::from_vec(&shape, data)
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}
