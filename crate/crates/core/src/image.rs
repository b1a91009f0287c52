//! Single-channel floating point images and the resampling they need.
//!
//! Coordinates are continuous with pixel `(x, y)` covering `[x, x+1) x [y, y+1)`,
//! so its centre sits at `(x + 0.5, y + 0.5)`. All geometric operations go
//! through [`Image::warp`], which samples bilinearly with a constant fill.

use std::path::Path;

use crate::error::{Error, Result};

/// Grayscale image with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "image {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
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

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f32 {
        if self.data.is_empty() {
            return 0.0;
        }
        (self.data.iter().map(|v| *v as f64).sum::<f64>() / self.data.len() as f64) as f32
    }

    pub fn variance(&self) -> f32 {
        if self.data.is_empty() {
            return 0.0;
        }
        let m = self.mean() as f64;
        (self.data.iter().map(|v| (*v as f64 - m).powi(2)).sum::<f64>() / self.data.len() as f64) as f32
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
    }

    /// Largest absolute pixel difference; `f32::INFINITY` when sizes differ.
    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        if self.width != other.width || self.height != other.height {
            return f32::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Copy of the rectangle with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Image {
        assert!(x + width <= self.width && y + height <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(width * height);
        for row in y..y + height {
            data.extend_from_slice(&self.data[row * self.width + x..row * self.width + x + width]);
        }
        Image { width, height, data }
    }

    /// Bilinear sample at continuous index coordinates (pixel centres at
    /// integers); outside samples blend with `fill`.
    #[inline]
    pub fn sample(&self, fx: f32, fy: f32, fill: f32) -> f32 {
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let at = |x: isize, y: isize| -> f32 {
            if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
                fill
            } else {
                self.data[y as usize * self.width + x as usize]
            }
        };
        if tx == 0.0 && ty == 0.0 {
            return at(x0, y0);
        }
        let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
        let bottom = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Resamples into a `width x height` canvas where output point `p`
    /// (continuous coordinates) reads the source at `map.apply(p)`. Points
    /// inside the source extent interpolate with edge clamping; points
    /// outside it read `fill`.
    pub fn warp(&self, width: usize, height: usize, map: &Affine, fill: f32) -> Image {
        let mut out = Image::new(width, height);
        let (w, h) = (self.width as f64, self.height as f64);
        let (xmax, ymax) = ((self.width - 1) as f32, (self.height - 1) as f32);
        for y in 0..height {
            for x in 0..width {
                let (sx, sy) = map.apply(x as f64 + 0.5, y as f64 + 0.5);
                out.data[y * width + x] = if sx < 0.0 || sy < 0.0 || sx > w || sy > h {
                    fill
                } else {
                    let fx = ((sx - 0.5) as f32).clamp(0.0, xmax);
                    let fy = ((sy - 0.5) as f32).clamp(0.0, ymax);
                    self.sample(fx, fy, fill)
                };
            }
        }
        out
    }

    /// Bilinear resize (half-pixel centres, edge clamping, no antialiasing).
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        self.warp(width, height, &Self::resize_map(self, width, height), 0.0)
    }

    pub(crate) fn resize_map(&self, width: usize, height: usize) -> Affine {
        Affine::scale(self.width as f64 / width as f64, self.height as f64 / height as f64)
    }

    /// Rotates the content by `degrees` (counter-clockwise as displayed)
    /// about the image centre, keeping the canvas size.
    pub fn rotate(&self, degrees: f64, fill: f32) -> Image {
        let (cx, cy) = (self.width as f64 / 2.0, self.height as f64 / 2.0);
        // Forward map: content rotated counter-clockwise on screen, which is a
        // clockwise angle in y-down coordinates.
        let forward = Affine::translation(cx, cy)
            .then_after(&Affine::rotation(-degrees.to_radians()))
            .then_after(&Affine::translation(-cx, -cy));
        self.warp(self.width, self.height, &forward.inverse(), fill)
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Image::from_vec(w as usize, h as usize, data)
    }

    /// Quantises to 8 bits (round to nearest).
    pub fn to_luma8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_luma8())
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_luma8())
            .expect("buffer length matches dimensions");
        buf.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
        Ok(bytes)
    }
}

/// 2-D affine map `(x, y) -> (a x + b y + c, d x + e y + f)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub m: [f64; 6],
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    };

    pub fn translation(tx: f64, ty: f64) -> Self {
        Affine {
            m: [1.0, 0.0, tx, 0.0, 1.0, ty],
        }
    }

    pub fn scale(sx: f64, sy: f64) -> Self {
        Affine {
            m: [sx, 0.0, 0.0, 0.0, sy, 0.0],
        }
    }

    /// Rotation by `radians` in the coordinate frame (y down).
    pub fn rotation(radians: f64) -> Self {
        let (s, c) = radians.sin_cos();
        Affine {
            m: [c, -s, 0.0, s, c, 0.0],
        }
    }

    /// Shear parallel to the x axis by `radians`.
    pub fn shear_x(radians: f64) -> Self {
        Affine {
            m: [1.0, radians.tan(), 0.0, 0.0, 1.0, 0.0],
        }
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5])
    }

    /// `self ∘ inner`: applies `inner` first, then `self`.
    pub fn then_after(&self, inner: &Affine) -> Affine {
        let a = &self.m;
        let b = &inner.m;
        Affine {
            m: [
                a[0] * b[0] + a[1] * b[3],
                a[0] * b[1] + a[1] * b[4],
                a[0] * b[2] + a[1] * b[5] + a[2],
                a[3] * b[0] + a[4] * b[3],
                a[3] * b[1] + a[4] * b[4],
                a[3] * b[2] + a[4] * b[5] + a[5],
            ],
        }
    }

    pub fn inverse(&self) -> Affine {
        let m = &self.m;
        let det = m[0] * m[4] - m[1] * m[3];
        let (a, b, d, e) = (m[4] / det, -m[1] / det, -m[3] / det, m[0] / det);
        Affine {
            m: [a, b, -(a * m[2] + b * m[5]), d, e, -(d * m[2] + e * m[5])],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_inverse_round_trips() {
        let a = Affine::translation(3.0, -2.0)
            .then_after(&Affine::rotation(0.3))
            .then_after(&Affine::shear_x(0.2))
            .then_after(&Affine::scale(1.5, 0.7));
        let (x, y) = a.apply(4.0, 5.0);
        let (bx, by) = a.inverse().apply(x, y);
        assert!((bx - 4.0).abs() < 1e-9 && (by - 5.0).abs() < 1e-9);
    }

    #[test]
    fn identity_warp_and_same_size_resize_are_exact() {
        let img = Image::from_vec(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(img.warp(3, 2, &Affine::IDENTITY, 0.0), img);
        assert_eq!(img.resize(3, 2), img);
    }

    #[test]
    fn upsampling_by_two_interpolates_between_centres() {
        let img = Image::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let up = img.resize(4, 1);
        assert_eq!(up.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn quarter_turn_rotation_moves_pixels() {
        let mut img = Image::new(4, 4);
        img.set(3, 1, 1.0);
        let r = img.rotate(90.0, 0.0);
        // counter-clockwise on screen: right-upper pixel moves to upper-left
        assert!((r.get(1, 0) - 1.0).abs() < 1e-5, "{:?}", r.data());
    }

    #[test]
    fn png_round_trip_preserves_quantised_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = Image::from_vec(2, 2, vec![0.0, 1.0, 128.0 / 255.0, 3.0 / 255.0]).unwrap();
        img.save_png(&path).unwrap();
        assert_eq!(Image::load_png(&path).unwrap(), img);
    }
}
