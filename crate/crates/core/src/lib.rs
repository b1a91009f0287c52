//! Self-supervised pretraining, linear evaluation, label auditing and
//! attribution for 14-class radiograph anatomical-region classification.

pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod explain;
pub mod image;
pub mod region;
pub mod rng;
pub mod ssl;
pub mod train;

pub use error::{Error, Result};
pub use image::{Affine, Image};
pub use region::{AnatomicalRegion, NUM_REGIONS};
