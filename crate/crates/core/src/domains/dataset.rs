use std::fmt;
use std::path::Path;

use image::imageops::{self, FilterType};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{images_to_tensor, Image};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainLabel {
    X,
    Y,
}

impl fmt::Display for DomainLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainLabel::X => "x",
            DomainLabel::Y => "y",
        })
    }
}

/// A non-empty, equally sized set of images from one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct UnpairedDataset {
    label: DomainLabel,
    items: Vec<Image>,
    source: String,
}

impl UnpairedDataset {
    pub fn new(label: DomainLabel, items: Vec<Image>, source: impl Into<String>) -> Result<Self> {
        let source = source.into();
        let Some(first) = items.first() else {
            return Err(Error::EmptyDataset(source.into()));
        };
        if let Some(i) = items.iter().position(|img| !img.same_shape(first)) {
            return Err(Error::Contract(format!(
                "dataset item {i} is {}x{}, expected {}x{}",
                items[i].height(),
                items[i].width(),
                first.height(),
                first.width()
            )));
        }
        Ok(Self { label, items, source })
    }

    pub fn label(&self) -> DomainLabel {
        self.label
    }

    pub fn items(&self) -> &[Image] {
        &self.items
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `(height, width)` shared by every item.
    pub fn image_shape(&self) -> (usize, usize) {
        (self.items[0].height(), self.items[0].width())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Vec<Image>,
    pub label: DomainLabel,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        images_to_tensor(&self.images)
    }
}

/// Loads every decodable image in `directory` (sorted by file name), resized to
/// `image_size × image_size`.
pub fn load_unpaired_dataset(directory: &Path, label: DomainLabel, image_size: usize) -> Result<UnpairedDataset> {
    if image_size == 0 || !image_size.is_multiple_of(4) {
        return Err(Error::Config(format!(
            "image size {image_size} must be a positive multiple of 4"
        )));
    }
    if !directory.is_dir() {
        return Err(Error::Config(format!(
            "dataset directory {} does not exist",
            directory.display()
        )));
    }
    let mut paths: Vec<_> = std::fs::read_dir(directory)
        .map_err(|e| Error::io(directory, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let side = image_size as u32;
    let mut items = Vec::with_capacity(paths.len());
    for path in &paths {
        let decoded = match image::open(path) {
            Ok(img) => img.to_rgb8(),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let rgb = if decoded.dimensions() == (side, side) {
            decoded
        } else {
            imageops::resize(&decoded, side, side, FilterType::Triangle)
        };
        items.push(Image::from_rgb8(&rgb)?);
    }
    if items.is_empty() {
        return Err(Error::EmptyDataset(directory.to_path_buf()));
    }
    UnpairedDataset::new(label, items, directory.display().to_string())
}

/// Draws `batch_size` items uniformly with replacement.
pub fn sample_batch<R: Rng + ?Sized>(dataset: &UnpairedDataset, batch_size: usize, rng: &mut R) -> Result<Batch> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let images = (0..batch_size)
        .map(|_| dataset.items[rng.gen_range(0..dataset.items.len())].clone())
        .collect();
    Ok(Batch {
        images,
        label: dataset.label,
    })
}
