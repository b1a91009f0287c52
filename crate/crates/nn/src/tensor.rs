use crate::error::{NnError, Result};

/// Dense row-major `f32` tensor. Image batches use NCHW layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(NnError::ShapeMismatch {
                context: "Tensor::from_vec",
                expected: shape.to_vec(),
                found: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// Slice of batch item `i`.
    pub fn item(&self, i: usize) -> &[f32] {
        let n = self.item_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.item_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NnError::ShapeMismatch {
                context: "Tensor::reshape",
                expected: shape.to_vec(),
                found: self.shape,
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Concatenates tensors along the batch dimension.
    pub fn cat(parts: &[&Tensor]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Ok(Tensor::zeros(&[0]));
        };
        let tail = &first.shape[1..];
        let mut batch = 0;
        let mut data = Vec::with_capacity(parts.iter().map(|t| t.len()).sum());
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(NnError::ShapeMismatch {
                    context: "Tensor::cat",
                    expected: first.shape.clone(),
                    found: p.shape.clone(),
                });
            }
            batch += p.batch();
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = batch;
        Ok(Tensor { shape, data })
    }

    /// Rows `start..end` of the batch dimension.
    pub fn slice_batch(&self, start: usize, end: usize) -> Tensor {
        let n = self.item_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            data: self.data[start * n..end * n].to_vec(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        crate::error::check_shape("Tensor::add_assign", &self.shape, &other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
