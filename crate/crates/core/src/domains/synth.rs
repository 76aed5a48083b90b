//! Procedural two-domain image families.
//!
//! - `hue-shift`: a random smooth brightness pattern colorized with one hue,
//!   drawn from `[0°, 60°]` for X and `[180°, 240°]` for Y by default.
//! - `disc-square`: one anti-aliased filled disc (X) or axis-aligned square
//!   (Y) of random size, position and color on a mid-gray background.
//!
//! Pixels are quantized to 8 bits at generation time, so a dataset written to
//! PNG and read back is identical to the in-memory one.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{DomainLabel, UnpairedDataset};
use super::image::{normalize_value, Image};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyId {
    HueShift,
    DiscSquare,
}

/// Hue intervals in degrees, `[low, high]` with `low <= high`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HueRanges {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Default for HueRanges {
    fn default() -> Self {
        Self {
            x: [0.0, 60.0],
            y: [180.0, 240.0],
        }
    }
}

impl HueRanges {
    pub fn center(&self, label: DomainLabel) -> f64 {
        let r = match label {
            DomainLabel::X => self.x,
            DomainLabel::Y => self.y,
        };
        (r[0] + r[1]) / 2.0
    }
}

/// Shape size (disc diameter or square side) as a fraction of the image side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeRanges {
    pub size: [f64; 2],
}

impl Default for ShapeRanges {
    fn default() -> Self {
        Self { size: [0.1875, 0.3125] }
    }
}

/// Descriptor of a synthetic family, serialized as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticFamily {
    pub family_id: FamilyId,
    pub image_size: usize,
    #[serde(default)]
    pub hue: HueRanges,
    #[serde(default)]
    pub shape: ShapeRanges,
}

/// Saturation of hue-shift images.
pub const HUE_SHIFT_SATURATION: f64 = 0.75;
/// Brightness range of the hue-shift pattern.
pub const HUE_SHIFT_VALUE: [f64; 2] = [0.35, 1.0];
/// Background intensity of disc-square images, in `[0, 1]`.
pub const SHAPE_BACKGROUND: f64 = 0.5;
/// Sub-samples per pixel side when rasterizing shapes.
pub const SUPERSAMPLE: usize = 4;

impl SyntheticFamily {
    pub fn hue_shift(image_size: usize) -> Self {
        Self {
            family_id: FamilyId::HueShift,
            image_size,
            hue: HueRanges::default(),
            shape: ShapeRanges::default(),
        }
    }

    pub fn disc_square(image_size: usize) -> Self {
        Self {
            family_id: FamilyId::DiscSquare,
            ..Self::hue_shift(image_size)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let family: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        family.validate()?;
        Ok(family)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("family serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 || !self.image_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "image_size {} must be a multiple of 4 and at least 8",
                self.image_size
            )));
        }
        for (name, r) in [("hue.x", self.hue.x), ("hue.y", self.hue.y)] {
            if !(0.0 <= r[0] && r[0] <= r[1] && r[1] <= 360.0) {
                return Err(Error::Config(format!("{name} must satisfy 0 <= low <= high <= 360")));
            }
        }
        let [lo, hi] = self.shape.size;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::Config("shape.size must satisfy 0 < low <= high < 1".into()));
        }
        Ok(())
    }
}

/// HSV (hue in degrees, s and v in `[0, 1]`) to RGB in `[0, 1]`.
pub fn hsv_to_rgb(hue: f64, s: f64, v: f64) -> [f64; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn quantize(rgb: [f64; 3]) -> [f32; 3] {
    rgb.map(|c| normalize_value((c.clamp(0.0, 1.0) * 255.0).round() as f32))
}

fn hue_shift_image<R: Rng>(family: &SyntheticFamily, label: DomainLabel, rng: &mut R) -> Image {
    let s = family.image_size;
    let range = match label {
        DomainLabel::X => family.hue.x,
        DomainLabel::Y => family.hue.y,
    };
    let hue = if range[0] < range[1] {
        rng.gen_range(range[0]..=range[1])
    } else {
        range[0]
    };
    // four plane waves with low integer frequencies over the image
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let (kx, ky) = loop {
                let k = (rng.gen_range(-2i32..=2), rng.gen_range(-2i32..=2));
                if k != (0, 0) {
                    break k;
                }
            };
            (
                f64::from(kx),
                f64::from(ky),
                rng.gen_range(0.0..TAU),
                rng.gen_range(0.5..1.0),
            )
        })
        .collect();
    let amp_total: f64 = waves.iter().map(|w| w.3).sum();
    let [v_lo, v_hi] = HUE_SHIFT_VALUE;
    let mut pixels = Vec::with_capacity(s * s * 3);
    for y in 0..s {
        for x in 0..s {
            let (u, v) = (x as f64 / s as f64, y as f64 / s as f64);
            let sum: f64 = waves
                .iter()
                .map(|&(kx, ky, phase, amp)| amp * (TAU * (kx * u + ky * v) + phase).cos())
                .sum();
            let level = 0.5 + 0.5 * sum / amp_total;
            let value = v_lo + (v_hi - v_lo) * level;
            pixels.extend(quantize(hsv_to_rgb(hue, HUE_SHIFT_SATURATION, value)));
        }
    }
    Image::new(s, s, pixels).expect("generated pixels are valid")
}

/// Fraction of pixel `(px, py)` covered by a shape, by `SUPERSAMPLE²` point samples.
pub(crate) fn coverage(square: bool, cx: f64, cy: f64, size: f64, px: usize, py: usize) -> f64 {
    let r = size / 2.0;
    let mut hits = 0usize;
    for sy in 0..SUPERSAMPLE {
        for sx in 0..SUPERSAMPLE {
            let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - cx;
            let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - cy;
            let inside = if square {
                x.abs() <= r && y.abs() <= r
            } else {
                x * x + y * y <= r * r
            };
            hits += usize::from(inside);
        }
    }
    hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
}

fn shape_image<R: Rng>(family: &SyntheticFamily, label: DomainLabel, rng: &mut R) -> Image {
    let s = family.image_size;
    let sf = s as f64;
    let size = rng.gen_range(family.shape.size[0]..=family.shape.size[1]) * sf;
    let r = size / 2.0;
    let cx = rng.gen_range(r + 1.0..=sf - r - 1.0);
    let cy = rng.gen_range(r + 1.0..=sf - r - 1.0);
    let color = hsv_to_rgb(
        rng.gen_range(0.0..360.0),
        rng.gen_range(0.6..=1.0),
        rng.gen_range(0.7..=1.0),
    );
    let square = label == DomainLabel::Y;
    let mut pixels = Vec::with_capacity(s * s * 3);
    for py in 0..s {
        for px in 0..s {
            let a = coverage(square, cx, cy, size, px, py);
            pixels.extend(quantize(color.map(|c| SHAPE_BACKGROUND * (1.0 - a) + c * a)));
        }
    }
    Image::new(s, s, pixels).expect("generated pixels are valid")
}

/// Generates `count` images of one domain; a pure function of its arguments.
pub fn synth_generate(
    family: &SyntheticFamily,
    label: DomainLabel,
    count: usize,
    seed: u64,
) -> Result<UnpairedDataset> {
    family.validate()?;
    if count == 0 {
        return Err(Error::Config("synthetic image count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match label {
        DomainLabel::X => 1,
        DomainLabel::Y => 2,
    });
    let items = (0..count)
        .map(|_| match family.family_id {
            FamilyId::HueShift => hue_shift_image(family, label, &mut rng),
            FamilyId::DiscSquare => shape_image(family, label, &mut rng),
        })
        .collect();
    let source = format!("synthetic:{:?}:{label}:seed={seed}", family.family_id);
    UnpairedDataset::new(label, items, source)
}

/// Writes images as `<prefix>_<index>.png` into `dir` and returns the paths.
pub fn write_pngs(images: &[Image], dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let path = dir.join(format!("{prefix}_{i:05}.png"));
            img.to_rgb8().save(&path).map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?;
            Ok(path)
        })
        .collect()
}
