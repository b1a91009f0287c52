//! Border removal and rotation normalisation.

use serde::{Deserialize, Serialize};

use crate::image::Image;

/// Pixels at or above this intensity count as part of a white frame.
pub const BORDER_THRESHOLD: f32 = 0.95;
/// Crops smaller than this on either side are refused.
pub const MIN_CROP: usize = 8;
/// Fitted angles below this magnitude are left alone.
const MIN_ROTATION_DEGREES: f64 = 0.5;
/// Axis-aligned box area must exceed the best rectangle by this factor
/// before a rotation is applied.
const MIN_AREA_GAIN: f64 = 1.05;
/// Foreground components below this share of the largest are noise.
const SPECK_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanWarning {
    /// Removing the frame would leave fewer than 8x8 pixels.
    DegenerateCrop,
    /// No foreground above the Otsu threshold.
    NoForeground,
}

/// What [`clean`] did to an image, so the same geometry can be replayed on
/// companion rasters such as object masks.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CleanReport {
    pub crop: Option<CropBox>,
    pub rotation_degrees: f64,
    pub warnings: Vec<CleanWarning>,
}

fn ring_is_white(image: &Image, inset: usize) -> bool {
    let (w, h) = (image.width(), image.height());
    let (x0, y0, x1, y1) = (inset, inset, w - 1 - inset, h - 1 - inset);
    (x0..=x1).all(|x| image.get(x, y0) >= BORDER_THRESHOLD && image.get(x, y1) >= BORDER_THRESHOLD)
        && (y0..=y1).all(|y| image.get(x0, y) >= BORDER_THRESHOLD && image.get(x1, y) >= BORDER_THRESHOLD)
}

/// Interior crop left after peeling every complete near-white perimeter
/// ring. `Ok(None)` when there is no such ring.
pub fn find_border(image: &Image) -> Result<Option<CropBox>, CleanWarning> {
    let (w, h) = (image.width(), image.height());
    let mut inset = 0;
    while 2 * inset < w.min(h) && ring_is_white(image, inset) {
        inset += 1;
    }
    if inset == 0 {
        return Ok(None);
    }
    if w < 2 * inset + MIN_CROP || h < 2 * inset + MIN_CROP {
        return Err(CleanWarning::DegenerateCrop);
    }
    Ok(Some(CropBox {
        x: inset,
        y: inset,
        width: w - 2 * inset,
        height: h - 2 * inset,
    }))
}

pub fn remove_border(image: &Image) -> Image {
    match find_border(image) {
        Ok(Some(b)) => image.crop(b.x, b.y, b.width, b.height),
        Ok(None) => image.clone(),
        Err(w) => {
            log::warn!("border removal skipped: {w:?}");
            image.clone()
        }
    }
}

/// Otsu threshold over a 256-bin histogram: pixels at or above the returned
/// value are foreground. `None` for constant images.
pub fn otsu_threshold(image: &Image) -> Option<f32> {
    let mut hist = [0u64; 256];
    for v in image.data() {
        hist[((v.clamp(0.0, 1.0) * 255.0).round()) as usize] += 1;
    }
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, c)| i as f64 * *c as f64).sum();
    let (mut w0, mut sum0) = (0u64, 0.0f64);
    let mut best: Option<(f64, usize)> = None;
    for (k, c) in hist.iter().enumerate().take(255) {
        w0 += c;
        sum0 += k as f64 * *c as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1).powi(2);
        if best.is_none_or(|(b, _)| between > b) {
            best = Some((between, k));
        }
    }
    best.map(|(_, k)| (k as f32 + 0.5) / 255.0)
}

/// Minimum-area rectangle fit of the foreground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationFit {
    /// Angle of the best rectangle's edge in image coordinates (y down),
    /// folded into (-45, 45].
    pub angle_degrees: f64,
    pub best_area: f64,
    pub axis_aligned_area: f64,
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn extent(hull: &[(f64, f64)], angle: f64) -> f64 {
    let (s, c) = angle.sin_cos();
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in hull {
        let u = x * c + y * s;
        let v = -x * s + y * c;
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    (umax - umin) * (vmax - vmin)
}

/// Pixels at or above `t`, without 8-connected specks smaller than
/// `SPECK_FRACTION` of the largest component.
fn foreground_mask(image: &Image, t: f32) -> Vec<bool> {
    let (w, h) = (image.width(), image.height());
    let above: Vec<bool> = image.data().iter().map(|v| *v >= t).collect();
    let mut component = vec![usize::MAX; w * h];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !above[start] || component[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        component[start] = id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            size += 1;
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            for (dx, dy) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if above[q] && component[q] == usize::MAX {
                    component[q] = id;
                    stack.push(q);
                }
            }
        }
        sizes.push(size);
    }
    let largest = sizes.iter().copied().max().unwrap_or(0) as f64;
    let keep: Vec<bool> = sizes.iter().map(|&s| s as f64 >= SPECK_FRACTION * largest).collect();
    component.iter().map(|&c| c != usize::MAX && keep[c]).collect()
}

/// Boundary points of the foreground with sub-pixel threshold crossings.
fn boundary_points(image: &Image, t: f32) -> Vec<(f64, f64)> {
    let (w, h) = (image.width(), image.height());
    let mask = foreground_mask(image, t);
    let fg = |x: usize, y: usize| mask[y * w + x];
    let mut pts = Vec::new();
    let crossing = |a: f32, b: f32| ((t - a) / (b - a)).clamp(0.0, 1.0) as f64;
    for y in 0..h {
        for x in 0..w {
            let here = fg(x, y);
            if here && (x == 0 || y == 0 || x == w - 1 || y == h - 1) {
                pts.push((x as f64 + 0.5, y as f64 + 0.5));
            }
            if x + 1 < w && here != fg(x + 1, y) {
                let f = crossing(image.get(x, y), image.get(x + 1, y));
                pts.push((x as f64 + 0.5 + f, y as f64 + 0.5));
            }
            if y + 1 < h && here != fg(x, y + 1) {
                let f = crossing(image.get(x, y), image.get(x, y + 1));
                pts.push((x as f64 + 0.5, y as f64 + 0.5 + f));
            }
        }
    }
    pts
}

/// Fits the minimum-area rectangle (rotating calipers over the convex hull)
/// of the Otsu foreground.
pub fn min_area_angle(image: &Image) -> Result<RotationFit, CleanWarning> {
    let t = otsu_threshold(image).ok_or(CleanWarning::NoForeground)?;
    let hull = convex_hull(boundary_points(image, t));
    if hull.len() < 3 {
        return Err(CleanWarning::NoForeground);
    }
    let axis_aligned_area = extent(&hull, 0.0);
    let mut best = (axis_aligned_area, 0.0f64);
    for i in 0..hull.len() {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        let angle = (b.1 - a.1).atan2(b.0 - a.0);
        let area = extent(&hull, angle);
        if area < best.0 {
            best = (area, angle);
        }
    }
    let mut deg = best.1.to_degrees().rem_euclid(90.0);
    if deg > 45.0 {
        deg -= 90.0;
    }
    Ok(RotationFit {
        angle_degrees: deg,
        best_area: best.0,
        axis_aligned_area,
    })
}

fn rotation_for(image: &Image) -> Result<f64, CleanWarning> {
    let fit = min_area_angle(image)?;
    let gain = fit.axis_aligned_area / fit.best_area.max(f64::MIN_POSITIVE);
    if fit.angle_degrees.abs() < MIN_ROTATION_DEGREES || gain < MIN_AREA_GAIN {
        return Ok(0.0);
    }
    Ok(fit.angle_degrees)
}

/// Rotates the foreground's minimum-area rectangle onto the axes.
pub fn normalize_rotation(image: &Image) -> Image {
    match rotation_for(image) {
        Ok(0.0) => image.clone(),
        Ok(deg) => image.rotate(deg, 0.0),
        Err(w) => {
            log::warn!("rotation normalisation skipped: {w:?}");
            image.clone()
        }
    }
}

pub fn clean_with_report(image: &Image) -> (Image, CleanReport) {
    let mut report = CleanReport::default();
    let cropped = match find_border(image) {
        Ok(Some(b)) => {
            report.crop = Some(b);
            image.crop(b.x, b.y, b.width, b.height)
        }
        Ok(None) => image.clone(),
        Err(w) => {
            report.warnings.push(w);
            image.clone()
        }
    };
    match rotation_for(&cropped) {
        Ok(0.0) => (cropped, report),
        Ok(deg) => {
            report.rotation_degrees = deg;
            (cropped.rotate(deg, 0.0), report)
        }
        Err(w) => {
            report.warnings.push(w);
            (cropped, report)
        }
    }
}

/// Border removal followed by rotation normalisation.
pub fn clean(image: &Image) -> Image {
    let (out, report) = clean_with_report(image);
    for w in &report.warnings {
        log::warn!("clean: {w:?}");
    }
    out
}

/// Replays a [`CleanReport`] on another raster of the same size.
pub fn apply_clean(image: &Image, report: &CleanReport) -> Image {
    let cropped = match report.crop {
        Some(b) => image.crop(b.x, b.y, b.width, b.height),
        None => image.clone(),
    };
    if report.rotation_degrees == 0.0 {
        cropped
    } else {
        cropped.rotate(report.rotation_degrees, 0.0)
    }
}
