use crate::error::{NnError, Result};
use crate::{Module, Param, Pass, Tensor};

/// Rectified linear unit. In guided mode the backward pass also suppresses
/// negative upstream gradients (guided backpropagation).
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }
}

impl Module for Relu {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        let mut out = x.clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.mask = pass.record.then(|| x.data().iter().map(|v| *v > 0.0).collect());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, guided: bool) -> Result<Tensor> {
        let mask = self.mask.take().ok_or(NnError::NotRecorded("Relu"))?;
        crate::error::check_shape("Relu grad", &[mask.len()], &[grad.len()])?;
        let mut dx = grad.clone();
        for (g, on) in dx.data_mut().iter_mut().zip(mask) {
            if !on || (guided && *g < 0.0) {
                *g = 0.0;
            }
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
