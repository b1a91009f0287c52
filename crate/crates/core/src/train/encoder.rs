use rand::Rng;
use radreg_nn::{Module, Param, Pass, ResNet18, ResNetConfig, Tensor};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::train::ModelConfig;

/// Images per forward pass when encoding without gradients.
pub const EVAL_CHUNK: usize = 256;

/// 18-layer residual feature extractor. Grayscale input is replicated to
/// three channels at the stem.
#[derive(Debug, Clone)]
pub struct Encoder {
    net: ResNet18,
    model: ModelConfig,
}

impl Encoder {
    pub fn new(model: ModelConfig, rng: &mut impl Rng) -> Self {
        let net = ResNet18::new(
            ResNetConfig {
                base_width: model.base_width,
                in_channels: 3,
            },
            rng,
        );
        Encoder { net, model }
    }

    pub fn model(&self) -> ModelConfig {
        self.model
    }

    pub fn embedding_width(&self) -> usize {
        self.net.embedding_width()
    }

    pub fn net(&self) -> &ResNet18 {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut ResNet18 {
        &mut self.net
    }

    pub fn params(&self) -> Vec<&Param> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }

    fn check_input(&self, images: &Tensor) -> Result<()> {
        let s = images.shape();
        let size = self.model.input_size;
        if s.len() != 4 || !(s[1] == 1 || s[1] == 3) || s[2] != size || s[3] != size {
            return Err(Error::ShapeMismatch(format!("encoder expects [batch, 1 or 3, {size}, {size}], got {s:?}")));
        }
        Ok(())
    }

    /// Forward pass with the given mode, returning `[batch, embedding]`.
    pub fn forward(&mut self, images: &Tensor, pass: Pass) -> Result<Tensor> {
        self.check_input(images)?;
        Ok(self.net.forward(images, pass)?)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        Ok(self.net.backward(grad, false)?)
    }

    /// Evaluation-mode embeddings.
    pub fn encode(&mut self, images: &Tensor) -> Result<Tensor> {
        self.check_input(images)?;
        let mut parts = Vec::new();
        for start in (0..images.batch()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(images.batch());
            parts.push(self.net.forward(&images.slice_batch(start, end), Pass::EVAL)?);
        }
        if parts.is_empty() {
            return Ok(Tensor::zeros(&[0, self.embedding_width()]));
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Ok(Tensor::cat(&refs)?)
    }

    /// Resizes to the input size and encodes in evaluation mode.
    pub fn encode_images(&mut self, images: &[&Image]) -> Result<Tensor> {
        let mut parts = Vec::new();
        for chunk in images.chunks(EVAL_CHUNK) {
            let batch = images_to_tensor(chunk, self.model.input_size);
            parts.push(self.net.forward(&batch, Pass::EVAL)?);
        }
        if parts.is_empty() {
            return Ok(Tensor::zeros(&[0, self.embedding_width()]));
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Ok(Tensor::cat(&refs)?)
    }
}

/// Stacks images into `[n, 1, size, size]`, resizing where needed.
pub fn images_to_tensor(images: &[&Image], size: usize) -> Tensor {
    let mut data = Vec::with_capacity(images.len() * size * size);
    for img in images {
        if img.width() == size && img.height() == size {
            data.extend_from_slice(img.data());
        } else {
            data.extend_from_slice(img.resize(size, size).data());
        }
    }
    Tensor::from_vec(&[images.len(), 1, size, size], data).expect("sizes agree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn small() -> Encoder {
        Encoder::new(
            ModelConfig {
                input_size: 32,
                base_width: 4,
            },
            &mut stream(1, &[]),
        )
    }

    #[test]
    fn shape_determinism_and_finiteness() {
        let mut enc = small();
        let mut rng = stream(2, &[]);
        let img = Image::from_vec(32, 32, (0..1024).map(|_| rng.random::<f32>()).collect()).unwrap();
        let one = enc.encode_images(&[&img]).unwrap();
        assert_eq!(one.shape(), &[1, 32]);
        let two = enc.encode_images(&[&img, &img]).unwrap();
        assert_eq!(two.item(0), two.item(1));
        assert!(two.all_finite());
    }

    #[test]
    fn standard_width_embeds_to_512() {
        let mut enc = Encoder::new(
            ModelConfig {
                input_size: 32,
                base_width: 64,
            },
            &mut stream(3, &[]),
        );
        let out = enc.encode(&Tensor::zeros(&[1, 1, 32, 32])).unwrap();
        assert_eq!(out.shape(), &[1, 512]);
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let mut enc = small();
        assert!(matches!(enc.encode(&Tensor::zeros(&[1, 1, 16, 16])), Err(Error::ShapeMismatch(_))));
    }
}
