//! Guided Grad-CAM attributions and embedding export.

use std::path::Path;

use image::{Rgb, RgbImage};
use log::warn;
use radreg_nn::{zero_grads, Module, Pass, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::BoundingBox;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::region::NUM_REGIONS;
use crate::train::{embed_bank, images_to_tensor, Encoder, EncoderCheckpoint, ImageBank, LinearHead};

/// Residual stage whose output feeds the class-activation map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CamLayer(pub usize);

impl CamLayer {
    /// Output of the fourth (last) residual stage.
    pub const LAST: CamLayer = CamLayer(4);
}

impl Default for CamLayer {
    fn default() -> Self {
        CamLayer::LAST
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub record_id: String,
    pub target: usize,
    /// Guided Grad-CAM magnitude before normalisation, at model input size.
    pub raw: Image,
    /// `raw` min-max scaled to `[0, 1]` (all zero when `raw` is constant).
    pub heatmap: Image,
    /// The resized model input.
    pub input: Image,
    /// Set when the encoder has never been trained.
    pub untrained: bool,
}

impl AttributionMap {
    /// Share of the heatmap mass inside `bbox` (zero for an empty map).
    pub fn mass_inside(&self, bbox: &BoundingBox) -> f64 {
        let h = &self.heatmap;
        let mut inside = 0.0;
        let mut total = 0.0;
        for y in 0..h.height() {
            for x in 0..h.width() {
                let v = h.get(x, y) as f64;
                total += v;
                if bbox.contains(x, y) {
                    inside += v;
                }
            }
        }
        if total > 0.0 {
            inside / total
        } else {
            0.0
        }
    }

    /// Input, blended overlay and heatmap side by side.
    pub fn triptych(&self) -> RgbImage {
        let (w, h) = (self.input.width() as u32, self.input.height() as u32);
        let mut out = RgbImage::new(3 * w, h);
        for y in 0..h {
            for x in 0..w {
                let g = self.input.get(x as usize, y as usize);
                let heat = colormap(self.heatmap.get(x as usize, y as usize));
                let grey = [g, g, g];
                let blend: [f32; 3] = std::array::from_fn(|c| 0.5 * grey[c] + 0.5 * heat[c]);
                out.put_pixel(x, y, to_rgb(grey));
                out.put_pixel(w + x, y, to_rgb(blend));
                out.put_pixel(2 * w + x, y, to_rgb(heat));
            }
        }
        out
    }

    /// Writes `<stem>.png` (triptych) and `<stem>-raw.png` (normalised map).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.triptych().save(dir.join(format!("{stem}.png")))?;
        self.heatmap.save_png(&dir.join(format!("{stem}-raw.png")))
    }
}

fn to_rgb(c: [f32; 3]) -> Rgb<u8> {
    Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
}

/// Blue to red through green and yellow.
fn colormap(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let ramp = |centre: f32| (1.5 - (4.0 * v - centre).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

fn min_max(raw: &Image) -> Image {
    let (lo, hi) = raw.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    let data = if range > 0.0 {
        raw.data().iter().map(|v| (v - lo) / range).collect()
    } else {
        vec![0.0; raw.data().len()]
    };
    Image::from_vec(raw.width(), raw.height(), data).expect("same size")
}

/// Guided Grad-CAM for `target` on one image: the rectified,
/// gradient-weighted activation map of a residual stage, upsampled to the
/// input size and multiplied by the guided-backpropagation input gradient.
pub fn guided_gradcam(
    encoder: &mut Encoder,
    head: &mut LinearHead,
    image: &Image,
    record_id: &str,
    target: usize,
    layer: CamLayer,
) -> Result<AttributionMap> {
    if target >= NUM_REGIONS {
        return Err(Error::InvalidClass(target));
    }
    if !(1..=4).contains(&layer.0) {
        return Err(Error::InvalidConfig(format!("CAM layer must be a residual stage 1..=4, got {}", layer.0)));
    }
    let size = encoder.model().input_size;
    let input = if image.width() == size && image.height() == size { image.clone() } else { image.resize(size, size) };
    let x = images_to_tensor(&[&input], size);
    let mut onehot = Tensor::zeros(&[1, NUM_REGIONS]);
    onehot.data_mut()[target] = 1.0;

    let net = encoder.net_mut();
    net.set_keep_stage_outputs(true);
    net.set_input_grad(true);
    let run = |net: &mut radreg_nn::ResNet18, head: &mut LinearHead, guided: bool| -> Result<(Tensor, Vec<Tensor>, Tensor)> {
        let emb = net.forward(&x, Pass::EVAL_RECORD)?;
        head.linear.forward(&emb, Pass::EVAL_RECORD)?;
        let g = head.linear.backward(&onehot, false)?;
        let activations = net.stage_outputs().stages[layer.0 - 1].clone();
        let (dx, stage_grads) = net.backward_with_stage_grads(&g, guided)?;
        Ok((activations, stage_grads, dx))
    };
    let result = run(net, head, false).and_then(|(a, grads, _)| Ok((a, grads, run(net, head, true)?.2)));
    net.set_keep_stage_outputs(false);
    net.set_input_grad(false);
    zero_grads(net.params_mut());
    zero_grads(head.linear.params_mut());
    let (activations, stage_grads, guided) = result?;

    let grad = &stage_grads[layer.0 - 1];
    let (c, h, w) = (activations.shape()[1], activations.shape()[2], activations.shape()[3]);
    let mut cam = vec![0.0f32; h * w];
    for ch in 0..c {
        let g = &grad.data()[ch * h * w..(ch + 1) * h * w];
        let alpha = g.iter().sum::<f32>() / (h * w) as f32;
        let a = &activations.data()[ch * h * w..(ch + 1) * h * w];
        for (m, v) in cam.iter_mut().zip(a) {
            *m += alpha * v;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let cam = Image::from_vec(w, h, cam)?.resize(size, size);
    let channels = guided.shape()[1];
    let plane = size * size;
    let raw: Vec<f32> = (0..plane)
        .map(|p| {
            let g: f32 = (0..channels).map(|ch| guided.data()[ch * plane + p]).sum();
            (cam.data()[p] * g).abs()
        })
        .collect();
    let raw = Image::from_vec(size, size, raw)?;
    Ok(AttributionMap {
        record_id: record_id.to_string(),
        target,
        heatmap: min_max(&raw),
        raw,
        input,
        untrained: false,
    })
}

/// [`guided_gradcam`] on a checkpoint, flagging encoders that were never
/// trained.
pub fn checkpoint_gradcam(
    checkpoint: &mut EncoderCheckpoint,
    head: &mut LinearHead,
    image: &Image,
    record_id: &str,
    target: usize,
    layer: CamLayer,
) -> Result<AttributionMap> {
    let untrained = checkpoint.epoch == 0;
    if untrained {
        warn!("attribution from an untrained encoder is not meaningful");
    }
    let mut map = guided_gradcam(&mut checkpoint.encoder, head, image, record_id, target, layer)?;
    map.untrained = untrained;
    Ok(map)
}

/// CSV of `id, label, e0 .. e{width-1}` with one row per bank image.
pub fn export_embeddings(encoder: &mut Encoder, bank: &ImageBank, path: &Path) -> Result<()> {
    if bank.is_empty() {
        return Err(Error::EmptySplit("embedding export".into()));
    }
    let set = embed_bank(encoder, bank)?;
    let emb = set.primary();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..set.width()).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for i in 0..bank.len() {
        let mut row = vec![bank.id(i).to_string(), bank.label(i).name().to_string()];
        row.extend(emb.item(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
