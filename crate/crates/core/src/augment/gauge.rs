//! Circular calibration-gauge decoys: synthesized templates and their
//! random insertion.

use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;

use crate::augment::AugmentationProfile;
use crate::error::{Error, Result};
use crate::image::Image;

/// Image size at which template diameters are nominal.
const REFERENCE_SIZE: f64 = 64.0;

/// A gauge patch with its coverage mask. The mask is zero outside the
/// circle of the nominal diameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeTemplate {
    pub image: Image,
    pub alpha: Image,
    pub diameter: f64,
    pub stroke: f64,
}

impl GaugeTemplate {
    /// Renders the gauge at `diameter` pixels: outline ring, eight radial
    /// ticks and a central dot.
    pub fn render(diameter: f64, stroke: f64) -> GaugeTemplate {
        let side = diameter.ceil().max(1.0) as usize;
        let c = side as f64 / 2.0;
        let radius = diameter / 2.0;
        let ring_r = radius - stroke / 2.0;
        let tick_in = ring_r - stroke - 0.25 * radius;
        let dot_r = stroke.max(1.0);
        let mut alpha = Image::new(side, side);
        for y in 0..side {
            for x in 0..side {
                let (dx, dy) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
                let r = dx.hypot(dy);
                let mut d = (r - ring_r).abs() - stroke / 2.0;
                d = d.min(r - dot_r);
                for k in 0..8 {
                    let (s, co) = (k as f64 * std::f64::consts::FRAC_PI_4).sin_cos();
                    let along = dx * co + dy * s;
                    let across = (-dx * s + dy * co).abs();
                    let t = along.clamp(tick_in, ring_r);
                    let tick = (along - t).hypot(across) - stroke * 0.375;
                    d = d.min(tick);
                }
                let cov = (0.5 - d).clamp(0.0, 1.0);
                let inside = (radius + 0.5 - r).clamp(0.0, 1.0);
                alpha.set(x, y, (cov * inside) as f32);
            }
        }
        let image = Image::from_vec(side, side, alpha.data().iter().map(|a| if *a > 0.0 { 1.0 } else { 0.0 }).collect())
            .expect("same size as mask");
        GaugeTemplate {
            image,
            alpha,
            diameter,
            stroke,
        }
    }

    pub fn side(&self) -> usize {
        self.image.width()
    }
}

/// The six built-in templates: three diameters times two stroke widths.
pub fn gauge_library() -> &'static [GaugeTemplate] {
    static LIBRARY: OnceLock<Vec<GaugeTemplate>> = OnceLock::new();
    LIBRARY.get_or_init(|| {
        let mut out = Vec::with_capacity(6);
        for diameter in [12.0, 16.0, 20.0] {
            for stroke in [1.2, 2.0] {
                out.push(GaugeTemplate::render(diameter, stroke));
            }
        }
        out
    })
}

/// Writes `gauge_<k>.png` and `gauge_<k>_mask.png` for every template.
pub fn write_gauge_assets(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::UnwritableOutputDir {
        path: dir.to_path_buf(),
        source,
    })?;
    for (k, t) in gauge_library().iter().enumerate() {
        t.image.save_png(&dir.join(format!("gauge_{k}.png")))?;
        t.alpha.save_png(&dir.join(format!("gauge_{k}_mask.png")))?;
    }
    Ok(())
}

/// Where and how one gauge is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaugePlacement {
    pub template: usize,
    pub scale: f64,
    pub opacity: f64,
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

pub(crate) fn draw_count(rng: &mut impl Rng, probs: &[f64; 3]) -> usize {
    let u: f64 = rng.random();
    if u < probs[0] {
        0
    } else if u < probs[0] + probs[1] {
        1
    } else {
        2
    }
}

/// Draws the gauge count and each gauge's template, scale, opacity and
/// location for a `width x height` image. Gauges that do not fit are dropped.
pub(crate) fn sample_gauges(rng: &mut impl Rng, profile: &AugmentationProfile, width: usize, height: usize) -> Vec<GaugePlacement> {
    let count = draw_count(rng, &profile.gauge_count_probs);
    let library = gauge_library();
    let size_factor = width.min(height) as f64 / REFERENCE_SIZE;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let template = rng.random_range(0..library.len());
        let scale = profile.gauge_scale.sample(rng);
        let opacity = profile.gauge_opacity.sample(rng);
        let side = (library[template].diameter * scale * size_factor).ceil().max(1.0) as usize;
        if side > width || side > height {
            log::debug!("image {width}x{height} too small for a {side}px gauge; skipped");
            continue;
        }
        let x = rng.random_range(0..=width - side);
        let y = rng.random_range(0..=height - side);
        out.push(GaugePlacement {
            template,
            scale,
            opacity,
            x,
            y,
            side,
        });
    }
    out
}

pub(crate) fn draw_gauges(image: &mut Image, placements: &[GaugePlacement]) {
    let size_factor = image.width().min(image.height()) as f64 / REFERENCE_SIZE;
    for p in placements {
        let base = &gauge_library()[p.template];
        let scaled;
        let t = if p.scale * size_factor == 1.0 {
            base
        } else {
            scaled = GaugeTemplate::render(base.diameter * p.scale * size_factor, base.stroke * p.scale * size_factor);
            &scaled
        };
        let side = t.side().min(p.side);
        for dy in 0..side {
            for dx in 0..side {
                let a = t.alpha.get(dx, dy) * p.opacity as f32;
                if a > 0.0 {
                    let (x, y) = (p.x + dx, p.y + dy);
                    let v = image.get(x, y) * (1.0 - a) + t.image.get(dx, dy) * a;
                    image.set(x, y, v);
                }
            }
        }
    }
}

/// Inserts zero to two gauges and reports where they went.
pub fn insert_gauges_placed(image: &Image, rng: &mut impl Rng, profile: &AugmentationProfile) -> (Image, Vec<GaugePlacement>) {
    let placements = sample_gauges(rng, profile, image.width(), image.height());
    let mut out = image.clone();
    draw_gauges(&mut out, &placements);
    (out, placements)
}

pub fn insert_gauges(image: &Image, rng: &mut impl Rng, profile: &AugmentationProfile) -> Image {
    insert_gauges_placed(image, rng, profile).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::Range;
    use crate::rng::stream;

    #[test]
    fn library_has_six_circular_templates() {
        let lib = gauge_library();
        assert_eq!(lib.len(), 6);
        for t in lib {
            let c = t.side() as f64 / 2.0;
            let mut mass = 0.0;
            for y in 0..t.side() {
                for x in 0..t.side() {
                    let r = (x as f64 + 0.5 - c).hypot(y as f64 + 0.5 - c);
                    if r > t.diameter / 2.0 + 0.5 {
                        assert_eq!(t.alpha.get(x, y), 0.0);
                    }
                    mass += t.alpha.get(x, y);
                }
            }
            assert!(mass > 10.0, "{mass}");
        }
    }

    #[test]
    fn zero_probability_leaves_image_untouched() {
        let img = Image::filled(64, 64, 0.3);
        let profile = AugmentationProfile::identity();
        let mut rng = stream(1, &[]);
        for _ in 0..20 {
            assert_eq!(insert_gauges(&img, &mut rng, &profile), img);
        }
    }

    #[test]
    fn opaque_gauge_reproduces_template_over_mask() {
        let img = Image::filled(64, 64, 0.2);
        let mut profile = AugmentationProfile::identity();
        profile.gauge_count_probs = [0.0, 1.0, 0.0];
        let mut rng = stream(5, &[]);
        let (out, placed) = insert_gauges_placed(&img, &mut rng, &profile);
        assert_eq!(placed.len(), 1);
        let p = placed[0];
        let t = &gauge_library()[p.template];
        for dy in 0..t.side() {
            for dx in 0..t.side() {
                let got = out.get(p.x + dx, p.y + dy);
                if t.alpha.get(dx, dy) == 1.0 {
                    assert_eq!(got, t.image.get(dx, dy));
                } else if t.alpha.get(dx, dy) == 0.0 {
                    assert_eq!(got, 0.2);
                }
            }
        }
    }

    #[test]
    fn too_small_images_get_no_gauges() {
        let img = Image::filled(4, 4, 0.1);
        let mut profile = AugmentationProfile::identity();
        profile.gauge_count_probs = [0.0, 0.0, 1.0];
        profile.gauge_scale = Range::point(20.0);
        let (out, placed) = insert_gauges_placed(&img, &mut stream(2, &[]), &profile);
        assert!(placed.is_empty());
        assert_eq!(out, img);
    }

    #[test]
    fn assets_are_written() {
        let dir = tempfile::tempdir().unwrap();
        write_gauge_assets(dir.path()).unwrap();
        let mask = Image::load_png(&dir.path().join("gauge_5_mask.png")).unwrap();
        assert_eq!(mask.width(), 20);
    }
}
