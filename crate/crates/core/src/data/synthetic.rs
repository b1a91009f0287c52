//! Procedural stand-in corpus: one bright silhouette family per region on a
//! dark, noisy background, optionally framed by a white border.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{write_manifest, DatasetIndex, RadiographRecord};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::region::{AnatomicalRegion, NUM_REGIONS};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub images_per_class: usize,
    pub image_size: usize,
    pub seed: u64,
    pub background_noise_level: f64,
    pub border_probability: f64,
    pub rotation_jitter_degrees: (f64, f64),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            images_per_class: 200,
            image_size: 64,
            seed: 7,
            background_noise_level: 0.2,
            border_probability: 0.3,
            rotation_jitter_degrees: (-20.0, 20.0),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.image_size < 32 {
            return bad("image_size must be at least 32");
        }
        if self.images_per_class < 10 {
            return bad("images_per_class must be at least 10");
        }
        if !(0.0..=1.0).contains(&self.background_noise_level) || !(0.0..=1.0).contains(&self.border_probability) {
            return bad("noise level and border probability must lie in [0, 1]");
        }
        let (lo, hi) = self.rotation_jitter_degrees;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad("rotation jitter range must be finite with lower <= upper");
        }
        Ok(())
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    /// Tight box around mask pixels above 0.5, if any.
    pub fn of_mask(mask: &Image) -> Option<BoundingBox> {
        let mut b: Option<BoundingBox> = None;
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) > 0.5 {
                    let bb = b.get_or_insert(BoundingBox { x0: x, y0: y, x1: x + 1, y1: y + 1 });
                    bb.x0 = bb.x0.min(x);
                    bb.y0 = bb.y0.min(y);
                    bb.x1 = bb.x1.max(x + 1);
                    bb.y1 = bb.y1.max(y + 1);
                }
            }
        }
        b
    }
}

/// One rendered image with its object coverage mask.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub image: Image,
    /// Object coverage in `[0, 1]`, same size as `image`.
    pub mask: Image,
    pub bbox: BoundingBox,
    pub border_width: usize,
    pub rotation_degrees: f64,
}

/// Result of [`generate_synthetic`]: the index plus per-record object boxes.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub index: DatasetIndex,
    pub boxes: BTreeMap<String, BoundingBox>,
    pub manifest: PathBuf,
}

pub fn synthetic_id(region: AnatomicalRegion, i: usize) -> String {
    format!("syn-{:02}-{i:05}", region.code())
}

/// Renders images into `out_dir/images`, writes `manifest.csv`,
/// `index.jsonl` and `boxes.csv`, and returns the unsplit index.
pub fn generate_synthetic(config: &SyntheticConfig, out_dir: &Path) -> Result<SyntheticCorpus> {
    config.validate()?;
    let unwritable = |source| Error::UnwritableOutputDir {
        path: out_dir.to_path_buf(),
        source,
    };
    let image_dir = out_dir.join("images");
    std::fs::create_dir_all(&image_dir).map_err(unwritable)?;
    let mut records = Vec::with_capacity(config.images_per_class * NUM_REGIONS);
    let mut boxes = BTreeMap::new();
    for region in AnatomicalRegion::ALL {
        for i in 0..config.images_per_class {
            let id = synthetic_id(region, i);
            let sample = render_synthetic(config, region, i);
            let path = image_dir.join(format!("{id}.png"));
            sample.image.save_png(&path).map_err(|e| match e {
                Error::Image(image::ImageError::IoError(io)) => unwritable(io),
                other => other,
            })?;
            boxes.insert(id.clone(), sample.bbox);
            records.push(RadiographRecord::new(id, path, region, None));
        }
    }
    let index = DatasetIndex::new(records)?;
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&index, &manifest)?;
    index.save_jsonl(&out_dir.join("index.jsonl"))?;
    let mut w = csv::Writer::from_path(out_dir.join("boxes.csv"))?;
    w.write_record(["id", "x0", "y0", "x1", "y1"])?;
    for (id, b) in &boxes {
        w.write_record([id.clone(), b.x0.to_string(), b.y0.to_string(), b.x1.to_string(), b.y1.to_string()])?;
    }
    w.flush()?;
    Ok(SyntheticCorpus { index, boxes, manifest })
}

/// Reads the `boxes.csv` written by [`generate_synthetic`].
pub fn load_boxes(path: &Path) -> Result<BTreeMap<String, BoundingBox>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut out = BTreeMap::new();
    for row in csv::Reader::from_path(path)?.deserialize() {
        let (id, x0, y0, x1, y1): (String, usize, usize, usize, usize) = row?;
        out.insert(id, BoundingBox { x0, y0, x1, y1 });
    }
    Ok(out)
}

/// Deterministic rendering of image `index` of `region`.
pub fn render_synthetic(config: &SyntheticConfig, region: AnatomicalRegion, index: usize) -> SyntheticSample {
    let mut rng = rng::stream(config.seed, &[0x5e7, region.code() as u64, index as u64]);
    let size = config.image_size;
    let s = size as f64;
    let (lo, hi) = config.rotation_jitter_degrees;
    let rotation_degrees = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let unit = s * 0.3 * rng.random_range(0.85..1.05);
    let stretch = (rng.random_range(0.9..1.1), rng.random_range(0.9..1.1));
    let centre = (
        s / 2.0 + rng.random_range(-0.06..0.06) * s,
        s / 2.0 + rng.random_range(-0.06..0.06) * s,
    );
    let shape = Shape::build(region, &mut rng);
    let background = rng.random_range(0.05..0.15f32);
    let foreground = rng.random_range(0.65..0.9f32);
    let noise_sd = (config.background_noise_level * 0.25) as f32;
    let noise = Normal::new(0.0f32, noise_sd.max(f32::MIN_POSITIVE)).expect("finite sd");
    let (sin, cos) = (-rotation_degrees.to_radians()).sin_cos();

    let mut image = Image::new(size, size);
    let mut mask = Image::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let px = x as f64 + 0.5 - centre.0;
            let py = y as f64 + 0.5 - centre.1;
            // Undo the object rotation to get object-frame coordinates.
            let ox = cos * px - sin * py;
            let oy = sin * px + cos * py;
            let u = (ox / (unit * stretch.0), oy / (unit * stretch.1));
            let d = shape.sdf(u) * unit * stretch.0.min(stretch.1);
            let cov = (0.5 - d).clamp(0.0, 1.0) as f32;
            let shade = foreground * (0.85 + 0.15 * ((u.1 as f32 + 1.0) / 2.0).clamp(0.0, 1.0));
            let n = if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let v = background * (1.0 - cov) + shade * cov + n;
            image.set(x, y, v.clamp(0.0, 0.9));
            mask.set(x, y, cov);
        }
    }
    let border_width = if rng.random_bool(config.border_probability) {
        rng.random_range(2..=5usize)
    } else {
        0
    };
    for y in 0..size {
        for x in 0..size {
            let edge = x.min(y).min(size - 1 - x).min(size - 1 - y);
            if edge < border_width {
                image.set(x, y, 1.0);
            }
        }
    }
    let bbox = BoundingBox::of_mask(&mask).unwrap_or(BoundingBox { x0: 0, y0: 0, x1: size, y1: size });
    SyntheticSample {
        image,
        mask,
        bbox,
        border_width,
        rotation_degrees,
    }
}

#[derive(Debug, Clone, Copy)]
enum Prim {
    Capsule { a: (f64, f64), b: (f64, f64), r: f64 },
    Disc { c: (f64, f64), r: f64 },
    Ring { c: (f64, f64), rx: f64, ry: f64, t: f64 },
    Rect { c: (f64, f64), h: (f64, f64) },
}

impl Prim {
    fn sdf(&self, p: (f64, f64)) -> f64 {
        match *self {
            Prim::Capsule { a, b, r } => {
                let pa = (p.0 - a.0, p.1 - a.1);
                let ba = (b.0 - a.0, b.1 - a.1);
                let len2 = ba.0 * ba.0 + ba.1 * ba.1;
                let t = if len2 > 0.0 { ((pa.0 * ba.0 + pa.1 * ba.1) / len2).clamp(0.0, 1.0) } else { 0.0 };
                (pa.0 - ba.0 * t).hypot(pa.1 - ba.1 * t) - r
            }
            Prim::Disc { c, r } => (p.0 - c.0).hypot(p.1 - c.1) - r,
            Prim::Ring { c, rx, ry, t } => {
                let q = ((p.0 - c.0) / rx, (p.1 - c.1) / ry);
                ((q.0.hypot(q.1) - 1.0) * rx.min(ry)).abs() - t
            }
            Prim::Rect { c, h } => {
                let d = ((p.0 - c.0).abs() - h.0, (p.1 - c.1).abs() - h.1);
                d.0.max(0.0).hypot(d.1.max(0.0)) + d.0.max(d.1).min(0.0)
            }
        }
    }
}

/// Union of primitives in object units (roughly `[-1, 1]^2`, y down).
struct Shape(Vec<Prim>);

impl Shape {
    fn sdf(&self, p: (f64, f64)) -> f64 {
        self.0.iter().map(|q| q.sdf(p)).fold(f64::INFINITY, f64::min)
    }

    fn build(region: AnatomicalRegion, rng: &mut impl Rng) -> Shape {
        use AnatomicalRegion::*;
        let mut j = |v: f64| v * rng.random_range(0.92..1.08);
        let cap = |a: (f64, f64), b: (f64, f64), r: f64| Prim::Capsule { a, b, r };
        let mut p = Vec::new();
        match region {
            Clavicle => {
                let amp = j(0.25);
                let pts: Vec<(f64, f64)> = (0..=8)
                    .map(|k| {
                        let x = -0.9 + 1.8 * k as f64 / 8.0;
                        (x, amp * (std::f64::consts::PI * x).sin())
                    })
                    .collect();
                let r = j(0.12);
                p.extend(pts.windows(2).map(|w| cap(w[0], w[1], r)));
            }
            Shoulder => {
                p.push(Prim::Disc { c: (0.0, -0.45), r: j(0.38) });
                p.push(cap((0.0, -0.3), (0.0, 0.9), j(0.17)));
            }
            Skull => {
                p.push(Prim::Ring { c: (0.0, -0.1), rx: j(0.85), ry: j(0.7), t: 0.09 });
                p.push(cap((-0.5, 0.75), (0.5, 0.75), j(0.08)));
            }
            Rib => {
                let r = j(0.07);
                for k in 0..3 {
                    let base = -0.6 + 0.45 * k as f64;
                    let pts: Vec<(f64, f64)> = (0..=6)
                        .map(|m| {
                            let x = -0.85 + 1.7 * m as f64 / 6.0;
                            (x, base + 0.3 * x * x)
                        })
                        .collect();
                    p.extend(pts.windows(2).map(|w| cap(w[0], w[1], r)));
                }
            }
            Elbow => {
                p.push(cap((-0.15, -0.9), (0.0, 0.0), j(0.15)));
                p.push(cap((0.0, 0.0), (j(0.8), 0.5), j(0.13)));
                p.push(Prim::Disc { c: (0.0, 0.0), r: j(0.22) });
            }
            Knee => {
                p.push(cap((0.0, -0.95), (0.0, -0.2), j(0.2)));
                p.push(cap((0.0, 0.15), (0.0, 0.95), j(0.17)));
                p.push(Prim::Disc { c: (-0.18, -0.15), r: 0.17 });
                p.push(Prim::Disc { c: (0.18, -0.15), r: 0.17 });
            }
            Wrist => {
                let r = j(0.14);
                for row in 0..2 {
                    for col in 0..4 {
                        p.push(Prim::Disc {
                            c: (-0.54 + 0.36 * col as f64, -0.4 + 0.36 * row as f64),
                            r,
                        });
                    }
                }
                p.push(cap((-0.25, 0.3), (-0.25, 0.95), j(0.1)));
                p.push(cap((0.25, 0.3), (0.25, 0.95), j(0.12)));
            }
            Hand => {
                p.push(Prim::Rect { c: (0.0, 0.45), h: (j(0.4), 0.3) });
                let r = j(0.07);
                for k in 0..4 {
                    let x = -0.3 + 0.2 * k as f64;
                    p.push(cap((x, 0.2), (x * 1.4, -0.9), r));
                }
                p.push(cap((-0.4, 0.4), (-0.9, -0.05), r));
            }
            Foot => {
                p.push(cap((-0.8, 0.3), (0.85, 0.3), j(0.15)));
                p.push(cap((-0.8, 0.3), (-0.3, -0.3), j(0.2)));
                p.push(cap((-0.3, -0.3), (0.85, 0.3), j(0.1)));
            }
            Ankle => {
                p.push(cap((0.0, -0.95), (0.0, 0.2), j(0.16)));
                p.push(cap((0.3, -0.95), (0.3, 0.1), j(0.07)));
                p.push(Prim::Disc { c: (0.05, 0.4), r: j(0.25) });
                p.push(cap((-0.6, 0.7), (0.6, 0.7), j(0.15)));
            }
            PelvisHip => {
                let r = j(0.36);
                p.push(Prim::Ring { c: (-0.45, 0.05), rx: r, ry: r, t: 0.08 });
                p.push(Prim::Ring { c: (0.45, 0.05), rx: r, ry: r, t: 0.08 });
                p.push(cap((-0.85, -0.55), (0.85, -0.55), j(0.1)));
            }
            CervicalSpine => {
                let h = (j(0.17), j(0.1));
                for k in 0..6 {
                    p.push(Prim::Rect { c: (0.0, -0.85 + 0.34 * k as f64), h });
                }
            }
            ThoracicSpine => {
                let h = (j(0.18), 0.07);
                for k in 0..8 {
                    let y = -0.88 + 0.25 * k as f64;
                    p.push(Prim::Rect { c: (0.0, y), h });
                    if k % 2 == 0 {
                        p.push(cap((0.2, y), (0.75, y + 0.15), 0.04));
                        p.push(cap((-0.2, y), (-0.75, y + 0.15), 0.04));
                    }
                }
            }
            LumbarSpine => {
                let h = (j(0.38), j(0.18));
                for k in 0..4 {
                    p.push(Prim::Rect { c: (0.0, -0.72 + 0.48 * k as f64), h });
                }
            }
        }
        Shape(p)
    }
}
