//! Deterministic cleaning and the stochastic augmentation pipeline.

mod clean;
mod gauge;
mod pipeline;
mod profile;

pub use clean::{
    apply_clean, clean, clean_with_report, find_border, BORDER_THRESHOLD, min_area_angle, normalize_rotation, otsu_threshold, remove_border,
    CleanReport, CleanWarning, CropBox, RotationFit,
};
pub use gauge::{gauge_library, insert_gauges, insert_gauges_placed, write_gauge_assets, GaugePlacement, GaugeTemplate};
pub use pipeline::{augment, augment_with_params, make_view_pair, render, sample_params, AugmentParams};
pub use profile::{AugmentationProfile, Range};
