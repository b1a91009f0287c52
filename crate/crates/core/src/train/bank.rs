use rayon::prelude::*;

use crate::augment::clean;
use crate::data::{DatasetIndex, Split};
use crate::error::Result;
use crate::image::Image;
use crate::region::AnatomicalRegion;

/// Decoded (optionally cleaned) images of one split, in index order, with
/// their training-visible labels.
#[derive(Debug, Clone, Default)]
pub struct ImageBank {
    ids: Vec<String>,
    labels: Vec<AnatomicalRegion>,
    images: Vec<Image>,
}

impl ImageBank {
    pub fn new(ids: Vec<String>, labels: Vec<AnatomicalRegion>, images: Vec<Image>) -> Self {
        assert!(ids.len() == labels.len() && ids.len() == images.len(), "bank columns differ in length");
        ImageBank { ids, labels, images }
    }

    /// Loads every record of `split` (all records when `None`).
    pub fn load(index: &DatasetIndex, split: Option<Split>, clean_images: bool) -> Result<Self> {
        let views: Vec<_> = index
            .records()
            .iter()
            .filter(|r| split.is_none() || r.split == split)
            .map(|r| r.training_view())
            .collect();
        let images = views
            .par_iter()
            .map(|v| {
                let img = Image::load_png(v.image_ref)?;
                Ok(if clean_images { clean(&img) } else { img })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ImageBank {
            ids: views.iter().map(|v| v.id.to_string()).collect(),
            labels: views.iter().map(|v| v.label).collect(),
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn label(&self, i: usize) -> AnatomicalRegion {
        self.labels[i]
    }

    pub fn labels(&self) -> &[AnatomicalRegion] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn subset(&self, indices: &[usize]) -> ImageBank {
        ImageBank {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
        }
    }

    /// Same images with replaced labels (e.g. after noise injection).
    pub fn with_labels(&self, labels: Vec<AnatomicalRegion>) -> ImageBank {
        assert_eq!(labels.len(), self.len());
        ImageBank {
            labels,
            ..self.clone()
        }
    }
}
