//! Translating images with a trained checkpoint.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domains::image::{images_to_tensor, tensor_to_images};
use crate::domains::Image;
use crate::error::{Error, Result};
use crate::losses::Direction;
use crate::networks::{hop_sequence_tensor, ModelBundle};
use crate::training::checkpoint::load_bundle;

/// Images translated per forward pass.
pub const TRANSLATE_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationRequest {
    pub direction: Direction,
    /// Defaults to the checkpoint's trained hop count.
    pub hops: Option<usize>,
    pub emit_intermediates: bool,
}

impl TranslationRequest {
    pub fn new(direction: Direction) -> Self {
        Self {
            direction,
            hops: None,
            emit_intermediates: true,
        }
    }
}

/// Hop outputs for one input image.
///
/// With intermediates, `frames` holds hops `0..=hops` in order (hop 0 is the
/// input). Without, it holds only the final hop.
#[derive(Clone, Debug, PartialEq)]
pub struct HopSequence {
    pub direction: Direction,
    pub hops: usize,
    pub frames: Vec<(usize, Image)>,
}

impl HopSequence {
    pub fn final_image(&self) -> &Image {
        &self.frames.last().expect("a sequence has at least one frame").1
    }

    pub fn frame(&self, hop: usize) -> Option<&Image> {
        self.frames.iter().find(|(k, _)| *k == hop).map(|(_, img)| img)
    }

    /// All hops `0..=hops`, if intermediates were kept.
    pub fn images(&self) -> Option<Vec<&Image>> {
        (self.frames.len() == self.hops + 1).then(|| self.frames.iter().map(|(_, img)| img).collect())
    }
}

pub fn translate(checkpoint: &Path, images: &[Image], request: &TranslationRequest) -> Result<Vec<HopSequence>> {
    let bundle = load_bundle(checkpoint)?;
    translate_with_bundle(&bundle, images, request)
}

pub fn translate_with_bundle(
    bundle: &ModelBundle,
    images: &[Image],
    request: &TranslationRequest,
) -> Result<Vec<HopSequence>> {
    let size = bundle.input_size();
    if let Some(bad) = images.iter().find(|img| img.height() != size || img.width() != size) {
        return Err(Error::Contract(format!(
            "image is {}x{}, checkpoint expects {size}x{size}",
            bad.height(),
            bad.width()
        )));
    }
    let hops = request.hops.unwrap_or(bundle.trained_hops);
    let generator = bundle.generator(request.direction);
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(TRANSLATE_CHUNK) {
        let x = images_to_tensor::<f32>(chunk)?;
        let seq = hop_sequence_tensor(generator, &x, hops)?;
        let mut per_hop: Vec<Vec<Image>> = if request.emit_intermediates {
            seq.iter().map(tensor_to_images).collect()
        } else {
            vec![tensor_to_images(seq.last().expect("n + 1 entries"))]
        };
        for i in 0..chunk.len() {
            let frames = if request.emit_intermediates {
                per_hop
                    .iter_mut()
                    .enumerate()
                    .map(|(k, imgs)| (k, imgs[i].clone()))
                    .collect()
            } else {
                vec![(hops, per_hop[0][i].clone())]
            };
            out.push(HopSequence {
                direction: request.direction,
                hops,
                frames,
            });
        }
    }
    // hop 0 is the caller's image, bit for bit
    if request.emit_intermediates || hops == 0 {
        for (seq, img) in out.iter_mut().zip(images) {
            seq.frames[0].1 = img.clone();
        }
    }
    Ok(out)
}

/// Reads one PNG, or every PNG in a directory sorted by file name, without
/// resizing. Returns `(file stem, image)` pairs.
pub fn read_inputs(path: &Path) -> Result<Vec<(String, Image)>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
        files
    } else if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        return Err(Error::Config(format!("input {} does not exist", path.display())));
    };
    if files.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    files
        .into_iter()
        .map(|file| {
            let rgb = image::open(&file)
                .map_err(|source| Error::Image {
                    path: file.clone(),
                    source,
                })?
                .to_rgb8();
            let stem = file
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((stem, Image::from_rgb8(&rgb)?))
        })
        .collect()
}

/// One entry of the sequence manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub input: String,
    pub direction: Direction,
    pub hops: usize,
    /// `(hop, file)` for every written frame.
    pub files: Vec<(usize, PathBuf)>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `<stem>_hop<k>.png` for every frame and a `manifest.json` listing them.
pub fn write_sequences(sequences: &[HopSequence], stems: &[String], out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    if sequences.len() != stems.len() {
        return Err(Error::Contract(format!(
            "{} sequences but {} names",
            sequences.len(),
            stems.len()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = Vec::with_capacity(sequences.len());
    for (seq, stem) in sequences.iter().zip(stems) {
        let mut files = Vec::with_capacity(seq.frames.len());
        for (k, img) in &seq.frames {
            let path = out_dir.join(format!("{stem}_hop{k}.png"));
            img.to_rgb8().save(&path).map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?;
            files.push((*k, path));
        }
        manifest.push(ManifestEntry {
            input: stem.clone(),
            direction: seq.direction,
            hops: seq.hops,
            files,
        });
    }
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
