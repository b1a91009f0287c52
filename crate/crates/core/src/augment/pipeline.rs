//! Gauge insertion, colour jitter, random affine and random resized crop,
//! applied in that order. The affine and the crop are fused into one
//! resampling step.

use rand::Rng;

use crate::augment::gauge::{draw_gauges, sample_gauges};
use crate::augment::{AugmentationProfile, GaugePlacement, Range};
use crate::image::{Affine, Image};

/// Every random quantity drawn for one augmented view.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub gauges: Vec<GaugePlacement>,
    pub brightness: f64,
    pub contrast: f64,
    pub rotation_deg: f64,
    /// Horizontal and vertical shift as fractions of the image size.
    pub translation_frac: (f64, f64),
    pub scale: f64,
    pub shear_deg: f64,
    pub crop_scale: f64,
    pub crop_ratio: f64,
    /// Crop rectangle `(x, y, width, height)` on the transformed canvas,
    /// after clamping to the canvas.
    pub crop: (f64, f64, f64, f64),
    /// Source size the parameters were drawn for.
    pub source_size: (usize, usize),
}

pub fn sample_params(rng: &mut impl Rng, profile: &AugmentationProfile, width: usize, height: usize) -> AugmentParams {
    let gauges = sample_gauges(rng, profile, width, height);
    let brightness = profile.jitter_brightness.sample(rng);
    let contrast = profile.jitter_contrast.sample(rng);
    let rotation_deg = profile.affine_rotation_deg.sample(rng);
    let translation_frac = (profile.affine_translation_frac.sample(rng), profile.affine_translation_frac.sample(rng));
    let scale = profile.affine_scale.sample(rng);
    let shear_deg = profile.affine_shear_deg.sample(rng);
    let crop_scale = profile.crop_scale.sample(rng);
    let log_ratio = Range::new(profile.crop_ratio.lo.ln(), profile.crop_ratio.hi.ln()).sample(rng);
    let crop_ratio = log_ratio.exp().clamp(profile.crop_ratio.lo, profile.crop_ratio.hi);
    let (w, h) = (width as f64, height as f64);
    let cw = (w * (crop_scale * crop_ratio).sqrt()).min(w);
    let ch = (h * (crop_scale / crop_ratio).sqrt()).min(h);
    let cx = Range::new(0.0, w - cw).sample(rng);
    let cy = Range::new(0.0, h - ch).sample(rng);
    AugmentParams {
        gauges,
        brightness,
        contrast,
        rotation_deg,
        translation_frac,
        scale,
        shear_deg,
        crop_scale,
        crop_ratio,
        crop: (cx, cy, cw, ch),
        source_size: (width, height),
    }
}

impl AugmentParams {
    /// Forward affine on the source canvas, about the image centre.
    pub fn affine(&self) -> Affine {
        let (w, h) = (self.source_size.0 as f64, self.source_size.1 as f64);
        let (cx, cy) = (w / 2.0, h / 2.0);
        Affine::translation(cx + self.translation_frac.0 * w, cy + self.translation_frac.1 * h)
            .then_after(&Affine::rotation(-self.rotation_deg.to_radians()))
            .then_after(&Affine::shear_x(self.shear_deg.to_radians()))
            .then_after(&Affine::scale(self.scale, self.scale))
            .then_after(&Affine::translation(-cx, -cy))
    }

    /// Map from output pixel coordinates back to source coordinates.
    pub fn output_to_source(&self, out_width: usize, out_height: usize) -> Affine {
        let (x, y, cw, ch) = self.crop;
        let crop = Affine::translation(x, y).then_after(&Affine::scale(cw / out_width as f64, ch / out_height as f64));
        self.affine().inverse().then_after(&crop)
    }
}

fn jitter(image: &mut Image, brightness: f64, contrast: f64) {
    if brightness != 1.0 {
        let b = brightness as f32;
        for v in image.data_mut() {
            *v *= b;
        }
        image.clamp01();
    }
    if contrast != 1.0 {
        let c = contrast as f32;
        let m = image.mean();
        for v in image.data_mut() {
            *v = c * *v + (1.0 - c) * m;
        }
        image.clamp01();
    }
}

/// Applies drawn parameters to `image`, producing a `out_width x out_height`
/// view.
pub fn render(image: &Image, params: &AugmentParams, out_width: usize, out_height: usize) -> Image {
    let mut work = image.clone();
    draw_gauges(&mut work, &params.gauges);
    jitter(&mut work, params.brightness, params.contrast);
    let mut out = work.warp(out_width, out_height, &params.output_to_source(out_width, out_height), 0.0);
    out.clamp01();
    out
}

pub fn augment_with_params(
    image: &Image,
    rng: &mut impl Rng,
    profile: &AugmentationProfile,
    out_size: (usize, usize),
) -> (Image, AugmentParams) {
    let params = sample_params(rng, profile, image.width(), image.height());
    (render(image, &params, out_size.0, out_size.1), params)
}

pub fn augment(image: &Image, rng: &mut impl Rng, profile: &AugmentationProfile, out_size: (usize, usize)) -> Image {
    augment_with_params(image, rng, profile, out_size).0
}

/// Two independent augmented views of the same source.
pub fn make_view_pair(
    image: &Image,
    rng: &mut impl Rng,
    profile: &AugmentationProfile,
    out_size: (usize, usize),
) -> (Image, Image) {
    let a = augment(image, rng, profile, out_size);
    let b = augment(image, rng, profile, out_size);
    (a, b)
}
