use crate::error::{check_shape, NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Trained by the optimiser.
    Weight,
    /// Running statistic; saved with the model but never trained.
    Buffer,
}

/// A named parameter tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: &[usize], value: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            kind: ParamKind::Weight,
            value,
            grad,
        }
    }

    pub fn buffer(name: impl Into<String>, shape: &[usize], value: Vec<f32>) -> Self {
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            kind: ParamKind::Buffer,
            value,
            grad: Vec::new(),
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Weight
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Serialisable snapshot of a parameter or buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn zero_grads(params: Vec<&mut Param>) {
    for p in params {
        p.zero_grad();
    }
}

pub fn state_dict(params: Vec<&Param>) -> Vec<NamedTensor> {
    params
        .into_iter()
        .map(|p| NamedTensor {
            name: p.name.clone(),
            shape: p.shape.clone(),
            data: p.value.clone(),
        })
        .collect()
}

/// Copies values from `state` into `params`, matching by name.
pub fn load_state(params: Vec<&mut Param>, state: &[NamedTensor]) -> Result<()> {
    for p in params {
        let t = state
            .iter()
            .find(|t| t.name == p.name)
            .ok_or_else(|| NnError::MissingTensor(p.name.clone()))?;
        check_shape("load_state", &p.shape, &t.shape)?;
        p.value.copy_from_slice(&t.data);
    }
    Ok(())
}
