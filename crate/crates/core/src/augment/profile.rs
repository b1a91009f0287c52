use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval, serialised as `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Range { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    /// Uniform draw; a degenerate interval returns its single value without
    /// consuming randomness.
    pub fn sample(&self, rng: &mut impl rand::Rng) -> f64 {
        if self.is_point() {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

impl From<[f64; 2]> for Range {
    fn from(v: [f64; 2]) -> Self {
        Range { lo: v[0], hi: v[1] }
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.lo, r.hi]
    }
}

/// Augmentation strengths for one training phase. Rotation and shear are in
/// degrees, translation is a fraction of the image size, crop scale is a
/// fraction of the image area and crop ratio is width / height relative to
/// the image aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationProfile {
    #[serde(rename = "Gauge Occurrences")]
    pub gauge_count_probs: [f64; 3],
    #[serde(rename = "Gauge Scale")]
    pub gauge_scale: Range,
    #[serde(rename = "Gauge Opacity")]
    pub gauge_opacity: Range,
    #[serde(rename = "Color Jitter Brightness")]
    pub jitter_brightness: Range,
    #[serde(rename = "Color Jitter Contrast")]
    pub jitter_contrast: Range,
    #[serde(rename = "Affine Rotation")]
    pub affine_rotation_deg: Range,
    #[serde(rename = "Affine Translation")]
    pub affine_translation_frac: Range,
    #[serde(rename = "Affine Scale")]
    pub affine_scale: Range,
    #[serde(rename = "Affine Shear")]
    pub affine_shear_deg: Range,
    #[serde(rename = "Random Resize Scale")]
    pub crop_scale: Range,
    #[serde(rename = "Random Resize Ratio")]
    pub crop_ratio: Range,
}

const THIRD: f64 = 1.0 / 3.0;

impl AugmentationProfile {
    /// Strong augmentation used while pretraining.
    pub const PRETRAIN: AugmentationProfile = AugmentationProfile {
        gauge_count_probs: [THIRD, THIRD, THIRD],
        gauge_scale: Range::new(0.8, 1.2),
        gauge_opacity: Range::new(0.75, 1.0),
        jitter_brightness: Range::new(0.5, 1.5),
        jitter_contrast: Range::new(0.25, 1.75),
        affine_rotation_deg: Range::new(-15.0, 15.0),
        affine_translation_frac: Range::new(-0.1, 0.1),
        affine_scale: Range::new(0.8, 1.5),
        affine_shear_deg: Range::new(-30.0, 30.0),
        crop_scale: Range::new(0.08, 1.0),
        crop_ratio: Range::new(3.0 / 4.0, 4.0 / 3.0),
    };

    /// Mild augmentation used while training classification heads.
    pub const TRAIN: AugmentationProfile = AugmentationProfile {
        gauge_count_probs: [THIRD, THIRD, THIRD],
        gauge_scale: Range::new(0.8, 1.2),
        gauge_opacity: Range::new(0.75, 1.0),
        jitter_brightness: Range::new(0.9, 1.1),
        jitter_contrast: Range::new(0.8, 1.2),
        affine_rotation_deg: Range::new(-5.0, 5.0),
        affine_translation_frac: Range::new(-0.02, 0.02),
        affine_scale: Range::new(0.95, 1.1),
        affine_shear_deg: Range::new(-10.0, 10.0),
        crop_scale: Range::new(0.95, 1.1),
        crop_ratio: Range::new(0.9, 1.1),
    };

    /// Every parameter at its no-op value; `augment` reduces to a resize.
    pub fn identity() -> AugmentationProfile {
        AugmentationProfile {
            gauge_count_probs: [1.0, 0.0, 0.0],
            gauge_scale: Range::point(1.0),
            gauge_opacity: Range::point(1.0),
            jitter_brightness: Range::point(1.0),
            jitter_contrast: Range::point(1.0),
            affine_rotation_deg: Range::point(0.0),
            affine_translation_frac: Range::point(0.0),
            affine_scale: Range::point(1.0),
            affine_shear_deg: Range::point(0.0),
            crop_scale: Range::point(1.0),
            crop_ratio: Range::point(1.0),
        }
    }

    pub fn by_name(name: &str) -> Result<AugmentationProfile> {
        match name {
            "pretrain" => Ok(Self::PRETRAIN),
            "train" => Ok(Self::TRAIN),
            "identity" => Ok(Self::identity()),
            other => Err(Error::InvalidConfig(format!("unknown augmentation profile `{other}`"))),
        }
    }

    pub fn ranges(&self) -> [(&'static str, Range); 10] {
        [
            ("Gauge Scale", self.gauge_scale),
            ("Gauge Opacity", self.gauge_opacity),
            ("Color Jitter Brightness", self.jitter_brightness),
            ("Color Jitter Contrast", self.jitter_contrast),
            ("Affine Rotation", self.affine_rotation_deg),
            ("Affine Translation", self.affine_translation_frac),
            ("Affine Scale", self.affine_scale),
            ("Affine Shear", self.affine_shear_deg),
            ("Random Resize Scale", self.crop_scale),
            ("Random Resize Ratio", self.crop_ratio),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.gauge_count_probs;
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("gauge occurrence probabilities {p:?} must sum to 1")));
        }
        for (name, r) in self.ranges() {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
                return Err(Error::InvalidConfig(format!("{name}: lower bound exceeds upper bound")));
            }
        }
        let positive = [
            self.gauge_scale,
            self.jitter_brightness,
            self.affine_scale,
            self.crop_scale,
            self.crop_ratio,
        ];
        if positive.iter().any(|r| r.lo <= 0.0)
            || self.jitter_contrast.lo < 0.0
            || !(0.0..=1.0).contains(&self.gauge_opacity.lo)
            || self.gauge_opacity.hi > 1.0
            || self.affine_shear_deg.lo <= -90.0
            || self.affine_shear_deg.hi >= 90.0
        {
            return Err(Error::InvalidConfig("augmentation range outside its domain".into()));
        }
        Ok(())
    }
}
