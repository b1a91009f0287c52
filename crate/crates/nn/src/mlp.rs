use rand::Rng;

use crate::error::Result;
use crate::{BatchNorm, Linear, Module, Param, Pass, Relu, Tensor};

/// Two-layer perceptron head: linear, batch norm, rectifier, linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub bn: BatchNorm,
    relu: Relu,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Mlp {
            fc1: Linear::new(&format!("{name}.fc1"), input, hidden, true, rng),
            bn: BatchNorm::new(&format!("{name}.bn"), hidden),
            relu: Relu::new(),
            fc2: Linear::new(&format!("{name}.fc2"), hidden, output, true, rng),
        }
    }

    pub fn input_width(&self) -> usize {
        self.fc1.in_features()
    }

    pub fn output_width(&self) -> usize {
        self.fc2.out_features()
    }
}

impl Module for Mlp {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        let h = self.fc1.forward(x, pass)?;
        let h = self.bn.forward(&h, pass)?;
        let h = self.relu.forward(&h, pass)?;
        self.fc2.forward(&h, pass)
    }

    fn backward(&mut self, grad: &Tensor, guided: bool) -> Result<Tensor> {
        let g = self.fc2.backward(grad, guided)?;
        let g = self.relu.backward(&g, guided)?;
        let g = self.bn.backward(&g, guided)?;
        self.fc1.backward(&g, guided)
    }

    fn params(&self) -> Vec<&Param> {
        let mut out = self.fc1.params();
        out.extend(self.bn.params());
        out.extend(self.fc2.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.fc1.params_mut();
        out.extend(self.bn.params_mut());
        out.extend(self.fc2.params_mut());
        out
    }
}
