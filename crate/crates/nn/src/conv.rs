use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NnError, Result};
use crate::gemm::{sgemm, Mat};
use crate::{Module, Param, Pass, Tensor};

/// Upper bound on the im2col scratch buffer, in floats.
const CHUNK_FLOATS: usize = 1 << 22;

/// 2-D convolution over NCHW input with square kernels, computed as im2col
/// followed by a single matrix product per chunk of images.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    input: Option<(Tensor, bool)>,
    input_grad: bool,
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

impl Conv2d {
    /// Kaiming-normal (fan-out) initialised convolution.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_out = (out_channels * kernel * kernel) as f32;
        let normal = Normal::new(0.0f32, (2.0 / fan_out).sqrt()).expect("valid std");
        let len = out_channels * in_channels * kernel * kernel;
        let value = (0..len).map(|_| normal.sample(rng)).collect();
        let weight = Param::new(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            value,
        );
        let bias = bias.then(|| Param::new(format!("{name}.bias"), &[out_channels], vec![0.0; out_channels]));
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            input: None,
            input_grad: true,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn geometry(&self, shape: &[usize]) -> Result<Geometry> {
        self.geometry_for(shape, self.in_channels)
    }

    fn geometry_for(&self, shape: &[usize], channels: usize) -> Result<Geometry> {
        if shape.len() != 4 || shape[1] != channels {
            return Err(NnError::ShapeMismatch {
                context: "Conv2d input",
                expected: vec![0, channels, 0, 0],
                found: shape.to_vec(),
            });
        }
        let (h, w) = (shape[2], shape[3]);
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(NnError::ShapeMismatch {
                context: "Conv2d spatial size smaller than kernel",
                expected: vec![self.kernel, self.kernel],
                found: vec![h, w],
            });
        }
        Ok(Geometry {
            n: shape[0],
            c: shape[1],
            h,
            w,
            oh: (h + 2 * self.padding - self.kernel) / self.stride + 1,
            ow: (w + 2 * self.padding - self.kernel) / self.stride + 1,
        })
    }

    fn chunk_size(&self, g: &Geometry) -> usize {
        let per_image = g.c * self.kernel * self.kernel * g.positions();
        (CHUNK_FLOATS / per_image.max(1)).clamp(1, g.n.max(1))
    }

    fn im2col(&self, x: &[f32], g: &Geometry, n0: usize, nc: usize, cols: &mut [f32]) {
        let (k, s, pad) = (self.kernel, self.stride, self.padding as isize);
        let p = g.positions();
        let width = nc * p;
        for ci in 0..g.c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let dst = &mut cols[row * width..(row + 1) * width];
                    for n in 0..nc {
                        let src = &x[((n0 + n) * g.c + ci) * g.h * g.w..][..g.h * g.w];
                        for y in 0..g.oh {
                            let drow = &mut dst[n * p + y * g.ow..n * p + (y + 1) * g.ow];
                            let iy = (y * s + ki) as isize - pad;
                            if iy < 0 || iy >= g.h as isize {
                                drow.fill(0.0);
                                continue;
                            }
                            let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                            for (xo, d) in drow.iter_mut().enumerate() {
                                let ix = (xo * s + kj) as isize - pad;
                                *d = if ix >= 0 && ix < g.w as isize { srow[ix as usize] } else { 0.0 };
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], g: &Geometry, n0: usize, nc: usize, dx: &mut [f32]) {
        let (k, s, pad) = (self.kernel, self.stride, self.padding as isize);
        let p = g.positions();
        let width = nc * p;
        for ci in 0..g.c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let src = &cols[row * width..(row + 1) * width];
                    for n in 0..nc {
                        let dst = &mut dx[((n0 + n) * g.c + ci) * g.h * g.w..][..g.h * g.w];
                        for y in 0..g.oh {
                            let iy = (y * s + ki) as isize - pad;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let srow = &src[n * p + y * g.ow..n * p + (y + 1) * g.ow];
                            let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                            for (xo, v) in srow.iter().enumerate() {
                                let ix = (xo * s + kj) as isize - pad;
                                if ix >= 0 && ix < g.w as isize {
                                    drow[ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Conv2d {
    /// Skip computing the gradient with respect to the input in `backward`
    /// (a zero tensor is returned instead). Parameter gradients are unaffected.
    pub fn set_input_grad(&mut self, enabled: bool) {
        self.input_grad = enabled;
    }

    /// Forward pass for a single-channel input that stands for `in_channels`
    /// identical replicas. Equivalent to replicating the channel and calling
    /// `forward`, but runs the convolution once with channel-summed weights.
    pub fn forward_replicated(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(NnError::ShapeMismatch {
                context: "Conv2d replicated input",
                expected: vec![0, 1, 0, 0],
                found: s.to_vec(),
            });
        }
        let folded = self.folded_weight();
        let g = self.geometry_for(s, 1)?;
        let out = self.run_forward(x.data(), &g, &folded);
        self.input = pass.record.then(|| (x.clone(), true));
        Ok(out)
    }

    fn folded_weight(&self) -> Vec<f32> {
        let kk = self.kernel * self.kernel;
        let mut folded = vec![0.0; self.out_channels * kk];
        for o in 0..self.out_channels {
            for c in 0..self.in_channels {
                let src = &self.weight.value[(o * self.in_channels + c) * kk..][..kk];
                for (d, v) in folded[o * kk..(o + 1) * kk].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        folded
    }

    fn run_forward(&self, x: &[f32], g: &Geometry, weight: &[f32]) -> Tensor {
        let (oc, p) = (self.out_channels, g.positions());
        let ckk = g.c * self.kernel * self.kernel;
        let chunk = self.chunk_size(g);
        let mut out = Tensor::zeros(&[g.n, oc, g.oh, g.ow]);
        let mut cols = vec![0.0f32; ckk * chunk * p];
        let mut ybuf = vec![0.0f32; oc * chunk * p];
        let mut n0 = 0;
        while n0 < g.n {
            let nc = chunk.min(g.n - n0);
            let width = nc * p;
            self.im2col(x, g, n0, nc, &mut cols);
            sgemm(
                oc,
                ckk,
                width,
                1.0,
                Mat { data: weight, rs: ckk, cs: 1 },
                Mat { data: &cols, rs: width, cs: 1 },
                0.0,
                &mut ybuf,
                width,
            );
            let od = out.data_mut();
            for i in 0..nc {
                for o in 0..oc {
                    let b = self.bias.as_ref().map_or(0.0, |b| b.value[o]);
                    let dst = &mut od[((n0 + i) * oc + o) * p..][..p];
                    let src = &ybuf[o * width + i * p..][..p];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s + b;
                    }
                }
            }
            n0 += nc;
        }
        out
    }

    /// Accumulates the weight gradient for `weight` into `dweight` and
    /// returns the input gradient.
    fn run_backward(&self, x: &Tensor, g: &Geometry, grad: &Tensor, weight: &[f32], dweight: &mut [f32], dbias: Option<&mut [f32]>) -> Tensor {
        let (oc, p) = (self.out_channels, g.positions());
        let ckk = g.c * self.kernel * self.kernel;
        let chunk = self.chunk_size(g);
        let mut dx = Tensor::zeros(x.shape());
        let mut cols = vec![0.0f32; ckk * chunk * p];
        let mut dy = vec![0.0f32; oc * chunk * p];
        let gd = grad.data();
        let mut dbias = dbias;
        let mut n0 = 0;
        while n0 < g.n {
            let nc = chunk.min(g.n - n0);
            let width = nc * p;
            self.im2col(x.data(), g, n0, nc, &mut cols);
            for i in 0..nc {
                for o in 0..oc {
                    dy[o * width + i * p..][..p].copy_from_slice(&gd[((n0 + i) * oc + o) * p..][..p]);
                }
            }
            if let Some(db) = dbias.as_deref_mut() {
                for (o, d) in db.iter_mut().enumerate() {
                    *d += dy[o * width..(o + 1) * width].iter().sum::<f32>();
                }
            }
            sgemm(
                oc,
                width,
                ckk,
                1.0,
                Mat { data: &dy, rs: width, cs: 1 },
                Mat { data: &cols, rs: 1, cs: width },
                1.0,
                dweight,
                ckk,
            );
            if self.input_grad {
                sgemm(
                    ckk,
                    oc,
                    width,
                    1.0,
                    Mat { data: weight, rs: 1, cs: ckk },
                    Mat { data: &dy, rs: width, cs: 1 },
                    0.0,
                    &mut cols,
                    width,
                );
                self.col2im(&cols[..ckk * width], g, n0, nc, dx.data_mut());
            }
            n0 += nc;
        }
        dx
    }
}

impl Module for Conv2d {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        let g = self.geometry(x.shape())?;
        let out = self.run_forward(x.data(), &g, &self.weight.value);
        self.input = pass.record.then(|| (x.clone(), false));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, _guided: bool) -> Result<Tensor> {
        let (x, replicated) = self.input.take().ok_or(NnError::NotRecorded("Conv2d"))?;
        let channels = if replicated { 1 } else { self.in_channels };
        let g = self.geometry_for(x.shape(), channels)?;
        crate::error::check_shape("Conv2d grad", &[g.n, self.out_channels, g.oh, g.ow], grad.shape())?;
        let dbias = self.bias.as_mut().map(|b| std::mem::take(&mut b.grad));
        let mut dbias = dbias;
        let dx = if replicated {
            let folded = self.folded_weight();
            let kk = self.kernel * self.kernel;
            let mut dfolded = vec![0.0; self.out_channels * kk];
            let dx = self.run_backward(&x, &g, grad, &folded, &mut dfolded, dbias.as_deref_mut());
            for o in 0..self.out_channels {
                for c in 0..self.in_channels {
                    let dst = &mut self.weight.grad[(o * self.in_channels + c) * kk..][..kk];
                    for (d, v) in dst.iter_mut().zip(&dfolded[o * kk..(o + 1) * kk]) {
                        *d += v;
                    }
                }
            }
            dx
        } else {
            let mut dweight = std::mem::take(&mut self.weight.grad);
            let dx = self.run_backward(&x, &g, grad, &self.weight.value, &mut dweight, dbias.as_deref_mut());
            self.weight.grad = dweight;
            dx
        };
        if let (Some(b), Some(db)) = (self.bias.as_mut(), dbias) {
            b.grad = db;
        }
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
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(x: &Tensor, conv: &Conv2d) -> Vec<f32> {
        let s = x.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (k, st, pad) = (conv.kernel, conv.stride, conv.padding as isize);
        let oh = (h + 2 * conv.padding - k) / st + 1;
        let ow = (w + 2 * conv.padding - k) / st + 1;
        let mut out = vec![0.0; n * conv.out_channels * oh * ow];
        for b in 0..n {
            for o in 0..conv.out_channels {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value[o]);
                        for ci in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (y * st + ki) as isize - pad;
                                    let ix = (xo * st + kj) as isize - pad;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += conv.weight.value[((o * c + ci) * k + ki) * k + kj]
                                        * x.data()[((b * c + ci) * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        out[((b * conv.out_channels + o) * oh + y) * ow + xo] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (7, 2, 3), (1, 2, 0)] {
            let mut conv = Conv2d::new("c", 2, 3, k, s, p, true, &mut rng);
            conv.bias.as_mut().unwrap().value = vec![0.1, -0.2, 0.3];
            let x = random_tensor(&[2, 2, 9, 8], &mut rng);
            let y = conv.forward(&x, Pass::EVAL).unwrap();
            let want = naive_conv(&x, &conv);
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b} for k={k} s={s}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::new("c", 2, 2, 3, 2, 1, true, &mut rng);
        let x = random_tensor(&[2, 2, 5, 5], &mut rng);
        let y = conv.forward(&x, Pass::TRAIN).unwrap();
        let upstream = random_tensor(y.shape(), &mut rng);
        let dx = conv.backward(&upstream, false).unwrap();
        let objective = |conv: &mut Conv2d, x: &Tensor| -> f64 {
            let y = conv.forward(x, Pass::EVAL).unwrap();
            y.data().iter().zip(upstream.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let h = 1e-2f32;
        for idx in [0, 7, 23, 49] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (objective(&mut conv, &xp) - objective(&mut conv, &xm)) / (2.0 * h as f64);
            assert!((fd - dx.data()[idx] as f64).abs() < 1e-2, "input {idx}: {fd} vs {}", dx.data()[idx]);
        }
        for idx in [0, 5, 17, 35] {
            let analytic = conv.weight.grad[idx] as f64;
            conv.weight.value[idx] += h;
            let fp = objective(&mut conv, &x);
            conv.weight.value[idx] -= 2.0 * h;
            let fm = objective(&mut conv, &x);
            conv.weight.value[idx] += h;
            let fd = (fp - fm) / (2.0 * h as f64);
            assert!((fd - analytic).abs() < 1e-2, "weight {idx}: {fd} vs {analytic}");
        }
    }

    #[test]
    fn replicated_forward_and_backward_match_explicit_replication() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut conv = Conv2d::new("c", 3, 4, 7, 2, 3, false, &mut rng);
        let mut twin = conv.clone();
        let gray = random_tensor(&[2, 1, 12, 12], &mut rng);
        let mut rgb = Vec::new();
        for b in 0..2 {
            for _ in 0..3 {
                rgb.extend_from_slice(gray.item(b));
            }
        }
        let rgb = Tensor::from_vec(&[2, 3, 12, 12], rgb).unwrap();
        let y1 = conv.forward_replicated(&gray, Pass::TRAIN).unwrap();
        let y3 = twin.forward(&rgb, Pass::TRAIN).unwrap();
        for (a, b) in y1.data().iter().zip(y3.data()) {
            assert!((a - b).abs() < 1e-4);
        }
        let up = random_tensor(y1.shape(), &mut rng);
        let dx1 = conv.backward(&up, false).unwrap();
        let dx3 = twin.backward(&up, false).unwrap();
        for (a, b) in conv.weight.grad.iter().zip(&twin.weight.grad) {
            assert!((a - b).abs() < 1e-3);
        }
        for i in 0..144 {
            let summed: f32 = (0..3).map(|c| dx3.data()[c * 144 + i]).sum();
            assert!((dx1.data()[i] - summed).abs() < 1e-3);
        }
    }
}
