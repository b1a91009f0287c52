//! Small CPU neural network toolkit with explicit forward/backward passes.
//!
//! Layers cache what they need during a recording forward pass and return the
//! gradient with respect to their input from `backward`. Parameter gradients
//! accumulate into each [`Param`] until [`zero_grads`] is called.
//!
//! The toolkit covers what an 18-layer residual encoder, its MLP heads and a
//! linear classifier need: convolutions (im2col + sgemm), batch
//! normalisation, rectifiers with an optional guided backward rule, pooling,
//! fully connected layers and Adam.

mod activation;
mod conv;
mod error;
mod gemm;
mod linear;
mod mlp;
mod norm;
mod optim;
mod param;
mod pool;
mod resnet;
mod tensor;

pub use activation::Relu;
pub use conv::Conv2d;
pub use error::{NnError, Result};
pub use linear::Linear;
pub use mlp::Mlp;
pub use norm::BatchNorm;
pub use optim::{Adam, AdamConfig};
pub use param::{load_state, state_dict, zero_grads, NamedTensor, Param, ParamKind};
pub use pool::{GlobalAvgPool, MaxPool2d};
pub use resnet::{BasicBlock, ResNet18, ResNetConfig, StageOutputs};
pub use tensor::Tensor;

/// Controls how a forward pass behaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pass {
    /// Use batch statistics in normalisation layers and update running stats.
    pub train: bool,
    /// Cache intermediate values so that `backward` can be called.
    pub record: bool,
}

impl Pass {
    pub const TRAIN: Pass = Pass { train: true, record: true };
    pub const EVAL: Pass = Pass { train: false, record: false };
    /// Evaluation statistics but with caches kept, used for attributions.
    pub const EVAL_RECORD: Pass = Pass { train: false, record: true };
}

/// A differentiable layer.
pub trait Module {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor>;

    /// Propagates `grad` (with respect to the last recorded output) back to the
    /// input. With `guided` set, rectifiers additionally drop negative
    /// incoming gradients.
    fn backward(&mut self, grad: &Tensor, guided: bool) -> Result<Tensor>;

    fn params(&self) -> Vec<&Param>;

    fn params_mut(&mut self) -> Vec<&mut Param>;
}
