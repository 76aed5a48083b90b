//! Analytic domain-membership scores for the synthetic families.
//!
//! Scores lie in `[0, 1]`: 0 is fully domain X, 1 fully domain Y.

use super::dataset::DomainLabel;
use super::image::Image;
use super::synth::{coverage, FamilyId, SyntheticFamily};
use crate::error::{Error, Result};

/// Pixels below this saturation carry no usable hue.
pub const MIN_SATURATION: f64 = 0.25;
/// Pixels darker than this (max channel, in `[0, 1]`) carry no usable hue.
pub const MIN_VALUE: f64 = 0.1;
/// Score of images with no measurable hue or no measurable shape.
pub const UNDECIDED: f64 = 0.5;
/// Grid spacing of the shape search, in pixels, for both position and size.
pub const SHAPE_GRID_STRIDE: usize = 2;
/// Grid candidates refined by local search.
const REFINE_STARTS: usize = 3;
/// Smallest position and size step of the local search, in pixels.
const REFINE_MIN_STEP: f64 = 0.125;

pub fn domain_oracle_score(image: &Image, family: &SyntheticFamily) -> Result<f64> {
    let s = family.image_size;
    if image.height() != s || image.width() != s {
        return Err(Error::Contract(format!(
            "image is {}x{}, family expects {s}x{s}",
            image.height(),
            image.width()
        )));
    }
    Ok(match family.family_id {
        FamilyId::HueShift => hue_score(image, family),
        FamilyId::DiscSquare => shape_score(image, family),
    })
}

fn to_unit(p: f32) -> f64 {
    ((f64::from(p) + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// HSV hue (degrees), saturation and value of an RGB triple in `[0, 1]`.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (h, s, max)
}

/// Circular mean hue (degrees) over saturated, non-dark pixels, if defined.
pub fn mean_hue(image: &Image) -> Option<f64> {
    let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0usize);
    for px in image.pixels().chunks_exact(3) {
        let (h, s, v) = rgb_to_hsv([to_unit(px[0]), to_unit(px[1]), to_unit(px[2])]);
        if s >= MIN_SATURATION && v >= MIN_VALUE {
            let rad = h.to_radians();
            sx += rad.cos();
            sy += rad.sin();
            n += 1;
        }
    }
    if n == 0 || (sx * sx + sy * sy).sqrt() < 1e-6 * n as f64 {
        return None;
    }
    Some(sy.atan2(sx).to_degrees().rem_euclid(360.0))
}

/// Angular distance to the X center relative to the summed distances to both
/// centers: linear along the shorter arc between them, and independent of
/// which way round the circle a hue lies.
fn hue_score(image: &Image, family: &SyntheticFamily) -> f64 {
    let Some(theta) = mean_hue(image) else {
        return UNDECIDED;
    };
    let to_x = angular_distance(theta, family.hue.center(DomainLabel::X));
    let to_y = angular_distance(theta, family.hue.center(DomainLabel::Y));
    if to_x + to_y == 0.0 {
        return UNDECIDED;
    }
    to_x / (to_x + to_y)
}

/// Distance between two hues in degrees, in `[0, 180]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Sums over the image of each channel and its square, in `[0, 1]` units.
struct ChannelStats {
    n: f64,
    sum: [f64; 3],
    sum_sq: [f64; 3],
}

/// Least-squares residual of fitting `pixel ≈ a + b·mask` per channel, summed
/// over channels. `mask` lists the pixels with non-zero coverage.
fn template_residual(unit: &[[f64; 3]], stats: &ChannelStats, mask: &[(usize, f64)]) -> f64 {
    let (mut sa, mut saa) = (0.0, 0.0);
    let mut sap = [0.0; 3];
    for &(i, a) in mask {
        sa += a;
        saa += a * a;
        for c in 0..3 {
            sap[c] += a * unit[i][c];
        }
    }
    let n = stats.n;
    let var_a = saa - sa * sa / n;
    let mut total = 0.0;
    for c in 0..3 {
        let var_p = stats.sum_sq[c] - stats.sum[c] * stats.sum[c] / n;
        let cov = sap[c] - sa * stats.sum[c] / n;
        let explained = if var_a > 1e-12 { cov * cov / var_a } else { 0.0 };
        total += (var_p - explained).max(0.0);
    }
    total
}

/// Residual of one placed template.
fn fit(
    unit: &[[f64; 3]],
    side: usize,
    stats: &ChannelStats,
    square: bool,
    (cx, cy, size): (f64, f64, f64),
    mask: &mut Vec<(usize, f64)>,
) -> f64 {
    let r = size / 2.0;
    mask.clear();
    let y0 = (cy - r).floor().max(0.0) as usize;
    let y1 = ((cy + r).ceil().max(0.0) as usize).min(side);
    let x0 = (cx - r).floor().max(0.0) as usize;
    let x1 = ((cx + r).ceil().max(0.0) as usize).min(side);
    for py in y0..y1 {
        for px in x0..x1 {
            let a = coverage(square, cx, cy, size, px, py);
            if a > 0.0 {
                mask.push((py * side + px, a));
            }
        }
    }
    template_residual(unit, stats, mask)
}

/// Best residual of a grid search over position and size, followed by a
/// pattern search around the best grid candidates.
fn best_residual(unit: &[[f64; 3]], family: &SyntheticFamily, stats: &ChannelStats, square: bool) -> f64 {
    let side = family.image_size;
    let sf = side as f64;
    let stride = SHAPE_GRID_STRIDE as f64;
    let lo = ((family.shape.size[0] * sf / stride).floor() * stride).max(stride);
    let hi = (family.shape.size[1] * sf / stride).ceil() * stride;
    let mut mask = Vec::new();
    let mut candidates: Vec<(f64, (f64, f64, f64))> = Vec::new();
    let mut size = lo;
    while size <= hi + 1e-9 {
        let r = size / 2.0;
        let mut cy = r;
        while cy <= sf - r + 1e-9 {
            let mut cx = r;
            while cx <= sf - r + 1e-9 {
                let p = (cx, cy, size);
                candidates.push((fit(unit, side, stats, square, p, &mut mask), p));
                cx += stride;
            }
            cy += stride;
        }
        size += stride;
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = f64::INFINITY;
    for &(start, p0) in candidates.iter().take(REFINE_STARTS) {
        let (mut res, mut p) = (start, p0);
        let mut step = stride / 2.0;
        while step >= REFINE_MIN_STEP {
            let mut improved = false;
            for (dx, dy, ds) in [
                (1.0, 0.0, 0.0),
                (-1.0, 0.0, 0.0),
                (0.0, 1.0, 0.0),
                (0.0, -1.0, 0.0),
                (0.0, 0.0, 1.0),
                (0.0, 0.0, -1.0),
            ] {
                let q = (p.0 + dx * step, p.1 + dy * step, (p.2 + ds * step).max(1.0));
                let rq = fit(unit, side, stats, square, q, &mut mask);
                if rq < res {
                    (res, p) = (rq, q);
                    improved = true;
                }
            }
            if !improved {
                step /= 2.0;
            }
        }
        best = best.min(res);
    }
    best
}

/// `residual_disc / (residual_disc + residual_square)` of the best grid fits.
fn shape_score(image: &Image, family: &SyntheticFamily) -> f64 {
    let unit: Vec<[f64; 3]> = image
        .pixels()
        .chunks_exact(3)
        .map(|p| [to_unit(p[0]), to_unit(p[1]), to_unit(p[2])])
        .collect();
    let mut stats = ChannelStats {
        n: unit.len() as f64,
        sum: [0.0; 3],
        sum_sq: [0.0; 3],
    };
    for p in &unit {
        for c in 0..3 {
            stats.sum[c] += p[c];
            stats.sum_sq[c] += p[c] * p[c];
        }
    }
    let rd = best_residual(&unit, family, &stats, false);
    let rs = best_residual(&unit, family, &stats, true);
    if rd + rs <= 1e-12 {
        return UNDECIDED;
    }
    rd / (rd + rs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_round_trip_of_primaries() {
        assert_eq!(rgb_to_hsv([1.0, 0.0, 0.0]), (0.0, 1.0, 1.0));
        assert_eq!(rgb_to_hsv([0.0, 0.0, 1.0]).0, 240.0);
        assert_eq!(rgb_to_hsv([0.5, 0.5, 0.5]).1, 0.0);
    }

    #[test]
    fn gray_is_undecided() {
        let img = Image::filled(32, 32, 0.0).unwrap();
        for family in [SyntheticFamily::hue_shift(32), SyntheticFamily::disc_square(32)] {
            assert_eq!(domain_oracle_score(&img, &family).unwrap(), 0.5);
        }
    }

    #[test]
    fn wrong_size_is_a_contract_error() {
        let img = Image::filled(16, 16, 0.0).unwrap();
        assert!(matches!(
            domain_oracle_score(&img, &SyntheticFamily::hue_shift(32)),
            Err(Error::Contract(_))
        ));
    }
}
