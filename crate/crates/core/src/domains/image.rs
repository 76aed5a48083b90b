use image::RgbImage;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// An RGB raster with channels-last pixels normalized to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

/// Maps an 8-bit intensity (or any value in `[0, 255]`) linearly onto `[-1, 1]`.
pub fn normalize_value(v: f32) -> f32 {
    v / 127.5 - 1.0
}

/// Inverse of [`normalize_value`], rounded half-to-even and saturated to `u8`.
pub fn denormalize_value(p: f32) -> u8 {
    ((p + 1.0) * 127.5).round_ties_even().clamp(0.0, 255.0) as u8
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || !height.is_multiple_of(4) || !width.is_multiple_of(4) {
            return Err(Error::Contract(format!(
                "image dimensions {height}x{width} must be positive multiples of 4"
            )));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::Contract(format!(
                "expected {} pixel values, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("pixel value {bad} outside [-1, 1]")));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * 3])
    }

    pub fn from_rgb8(img: &RgbImage) -> Result<Self> {
        let pixels = img.as_raw().iter().map(|&v| normalize_value(f32::from(v))).collect();
        Self::new(img.height() as usize, img.width() as usize, pixels)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self.pixels.iter().map(|&p| denormalize_value(p)).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Channels-last pixel values.
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Packs equally sized images into a `(3, N, H, W)` tensor.
pub fn images_to_tensor<T: Real>(images: &[Image]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Contract("empty image list".into()))?;
    let (h, w) = (first.height, first.width);
    let mut t = Tensor::zeros(3, images.len(), h, w);
    for (n, img) in images.iter().enumerate() {
        if !img.same_shape(first) {
            return Err(Error::Contract(format!(
                "image {n} is {}x{}, expected {h}x{w}",
                img.height, img.width
            )));
        }
        for c in 0..3 {
            let plane = t.plane_mut(c, n);
            for (i, v) in plane.iter_mut().enumerate() {
                *v = T::from_f32(img.pixels[i * 3 + c]).unwrap();
            }
        }
    }
    Ok(t)
}

/// Splits a `(3, N, H, W)` tensor back into images.
///
/// Values are clamped to `[-1, 1]`; generator outputs already lie inside.
pub fn tensor_to_images<T: Real>(t: &Tensor<T>) -> Vec<Image> {
    assert_eq!(t.channels, 3, "images have three channels");
    (0..t.batch)
        .map(|n| {
            let mut pixels = vec![0f32; t.height * t.width * 3];
            for c in 0..3 {
                for (i, v) in t.plane(c, n).iter().enumerate() {
                    pixels[i * 3 + c] = v.to_f32().unwrap().clamp(-1.0, 1.0);
                }
            }
            Image {
                height: t.height,
                width: t.width,
                pixels,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize_value(0.0), -1.0);
        assert_eq!(normalize_value(255.0), 1.0);
        assert_eq!(normalize_value(127.5), 0.0);
    }

    #[test]
    fn every_u8_round_trips() {
        for v in 0..=255u8 {
            assert_eq!(denormalize_value(normalize_value(f32::from(v))), v);
        }
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(Image::new(6, 8, vec![0.0; 6 * 8 * 3]).is_err());
        assert!(Image::new(4, 4, vec![0.0; 10]).is_err());
        assert!(Image::new(4, 4, vec![1.5; 48]).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let px: Vec<f32> = (0..4 * 8 * 3).map(|i| (i as f32 / 96.0) * 2.0 - 1.0).collect();
        let img = Image::new(4, 8, px).unwrap();
        let t: Tensor<f64> = images_to_tensor(&[img.clone(), img.clone()]).unwrap();
        assert_eq!(t.shape(), [3, 2, 4, 8]);
        let back = tensor_to_images(&t);
        assert_eq!(back[1], img);
    }
}
