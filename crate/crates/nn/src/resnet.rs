use rand::Rng;

use crate::error::{NnError, Result};
use crate::{BatchNorm, Conv2d, GlobalAvgPool, MaxPool2d, Module, Param, Pass, Relu, Tensor};

/// Residual block with two 3x3 convolutions and an optional projection
/// shortcut.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm,
    relu1: Relu,
    conv2: Conv2d,
    bn2: BatchNorm,
    downsample: Option<(Conv2d, BatchNorm)>,
    relu_out: Relu,
}

impl BasicBlock {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, output: usize, stride: usize, rng: &mut R) -> Self {
        let downsample = (stride != 1 || input != output).then(|| {
            (
                Conv2d::new(&format!("{name}.downsample.0"), input, output, 1, stride, 0, false, rng),
                BatchNorm::new(&format!("{name}.downsample.1"), output),
            )
        });
        BasicBlock {
            conv1: Conv2d::new(&format!("{name}.conv1"), input, output, 3, stride, 1, false, rng),
            bn1: BatchNorm::new(&format!("{name}.bn1"), output),
            relu1: Relu::new(),
            conv2: Conv2d::new(&format!("{name}.conv2"), output, output, 3, 1, 1, false, rng),
            bn2: BatchNorm::new(&format!("{name}.bn2"), output),
            downsample,
            relu_out: Relu::new(),
        }
    }
}

impl Module for BasicBlock {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        let h = self.conv1.forward(x, pass)?;
        let h = self.bn1.forward(&h, pass)?;
        let h = self.relu1.forward(&h, pass)?;
        let h = self.conv2.forward(&h, pass)?;
        let mut h = self.bn2.forward(&h, pass)?;
        match self.downsample.as_mut() {
            Some((conv, bn)) => {
                let s = conv.forward(x, pass)?;
                h.add_assign(&bn.forward(&s, pass)?)?;
            }
            None => h.add_assign(x)?,
        }
        self.relu_out.forward(&h, pass)
    }

    fn backward(&mut self, grad: &Tensor, guided: bool) -> Result<Tensor> {
        let g = self.relu_out.backward(grad, guided)?;
        let m = self.bn2.backward(&g, guided)?;
        let m = self.conv2.backward(&m, guided)?;
        let m = self.relu1.backward(&m, guided)?;
        let m = self.bn1.backward(&m, guided)?;
        let mut dx = self.conv1.backward(&m, guided)?;
        match self.downsample.as_mut() {
            Some((conv, bn)) => {
                let s = bn.backward(&g, guided)?;
                dx.add_assign(&conv.backward(&s, guided)?)?;
            }
            None => dx.add_assign(&g)?,
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        let mut out = self.conv1.params();
        out.extend(self.bn1.params());
        out.extend(self.conv2.params());
        out.extend(self.bn2.params());
        if let Some((c, b)) = &self.downsample {
            out.extend(c.params());
            out.extend(b.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.conv1.params_mut();
        out.extend(self.bn1.params_mut());
        out.extend(self.conv2.params_mut());
        out.extend(self.bn2.params_mut());
        if let Some((c, b)) = self.downsample.as_mut() {
            out.extend(c.params_mut());
            out.extend(b.params_mut());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResNetConfig {
    /// Channels of the first stage; the four stages use 1x, 2x, 4x and 8x this.
    pub base_width: usize,
    pub in_channels: usize,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        ResNetConfig {
            base_width: 64,
            in_channels: 3,
        }
    }
}

impl ResNetConfig {
    pub fn embedding_width(&self) -> usize {
        self.base_width * 8
    }
}

/// Feature maps produced by the four residual stages during a recorded pass.
#[derive(Debug, Clone, Default)]
pub struct StageOutputs {
    pub stages: Vec<Tensor>,
}

/// 18-layer residual network without its classification layer: a strided 7x7
/// stem, max pooling, four stages of two basic blocks and global average
/// pooling. Output width is `8 * base_width` (512 for the standard width).
///
/// A single-channel `[N, 1, H, W]` batch is accepted as shorthand for the
/// channel replicated `in_channels` times.
#[derive(Debug, Clone)]
pub struct ResNet18 {
    config: ResNetConfig,
    stem: Conv2d,
    stem_bn: BatchNorm,
    stem_relu: Relu,
    pool: MaxPool2d,
    stages: Vec<[BasicBlock; 2]>,
    gap: GlobalAvgPool,
    keep_stage_outputs: bool,
    stage_outputs: StageOutputs,
}

impl ResNet18 {
    pub fn new<R: Rng + ?Sized>(config: ResNetConfig, rng: &mut R) -> Self {
        let w = config.base_width;
        let stem = Conv2d::new("conv1", config.in_channels, w, 7, 2, 3, false, rng);
        let mut stages = Vec::with_capacity(4);
        let mut input = w;
        for (i, mult) in [1usize, 2, 4, 8].into_iter().enumerate() {
            let out = w * mult;
            let stride = if i == 0 { 1 } else { 2 };
            let name = format!("layer{}", i + 1);
            stages.push([
                BasicBlock::new(&format!("{name}.0"), input, out, stride, rng),
                BasicBlock::new(&format!("{name}.1"), out, out, 1, rng),
            ]);
            input = out;
        }
        ResNet18 {
            config,
            stem,
            stem_bn: BatchNorm::new("bn1", w),
            stem_relu: Relu::new(),
            pool: MaxPool2d::new(3, 2, 1),
            stages,
            gap: GlobalAvgPool::new(),
            keep_stage_outputs: false,
            stage_outputs: StageOutputs::default(),
        }
    }

    pub fn config(&self) -> ResNetConfig {
        self.config
    }

    pub fn embedding_width(&self) -> usize {
        self.config.embedding_width()
    }

    /// Whether `backward` computes the gradient with respect to the network
    /// input. Training does not need it; pixel attributions do.
    pub fn set_input_grad(&mut self, enabled: bool) {
        self.stem.set_input_grad(enabled);
    }

    /// Keep the output of every stage from recorded passes (for class
    /// activation maps).
    pub fn set_keep_stage_outputs(&mut self, keep: bool) {
        self.keep_stage_outputs = keep;
    }

    pub fn stage_outputs(&self) -> &StageOutputs {
        &self.stage_outputs
    }

    /// Backward pass that also returns the gradient with respect to each
    /// stage output (index 0 is stage 1).
    pub fn backward_with_stage_grads(&mut self, grad: &Tensor, guided: bool) -> Result<(Tensor, Vec<Tensor>)> {
        let mut g = self.gap.backward(grad, guided)?;
        let mut stage_grads = vec![Tensor::zeros(&[0]); self.stages.len()];
        for (i, blocks) in self.stages.iter_mut().enumerate().rev() {
            stage_grads[i] = g.clone();
            g = blocks[1].backward(&g, guided)?;
            g = blocks[0].backward(&g, guided)?;
        }
        let g = self.pool.backward(&g, guided)?;
        let g = self.stem_relu.backward(&g, guided)?;
        let g = self.stem_bn.backward(&g, guided)?;
        let dx = self.stem.backward(&g, guided)?;
        Ok((dx, stage_grads))
    }
}

impl Module for ResNet18 {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        let channels = if x.shape().len() == 4 { x.shape()[1] } else { 0 };
        let h = if channels == self.config.in_channels {
            self.stem.forward(x, pass)?
        } else if channels == 1 {
            self.stem.forward_replicated(x, pass)?
        } else {
            return Err(NnError::ShapeMismatch {
                context: "ResNet18 input",
                expected: vec![x.batch(), self.config.in_channels, 0, 0],
                found: x.shape().to_vec(),
            });
        };
        let h = self.stem_bn.forward(&h, pass)?;
        let h = self.stem_relu.forward(&h, pass)?;
        let mut h = self.pool.forward(&h, pass)?;
        let keep = self.keep_stage_outputs && pass.record;
        self.stage_outputs.stages.clear();
        for blocks in self.stages.iter_mut() {
            h = blocks[0].forward(&h, pass)?;
            h = blocks[1].forward(&h, pass)?;
            if keep {
                self.stage_outputs.stages.push(h.clone());
            }
        }
        self.gap.forward(&h, pass)
    }

    fn backward(&mut self, grad: &Tensor, guided: bool) -> Result<Tensor> {
        self.backward_with_stage_grads(grad, guided).map(|(dx, _)| dx)
    }

    fn params(&self) -> Vec<&Param> {
        let mut out = self.stem.params();
        out.extend(self.stem_bn.params());
        for blocks in &self.stages {
            for b in blocks {
                out.extend(b.params());
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.stem.params_mut();
        out.extend(self.stem_bn.params_mut());
        for blocks in self.stages.iter_mut() {
            for b in blocks.iter_mut() {
                out.extend(b.params_mut());
            }
        }
        out
    }
}
