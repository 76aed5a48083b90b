use std::f64::consts::TAU;

use multihop::domains::oracle::{mean_hue, rgb_to_hsv};
use multihop::domains::synth::{hsv_to_rgb, write_pngs};
use multihop::domains::*;
use multihop::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scores(family: &SyntheticFamily, label: DomainLabel, count: usize, seed: u64) -> Vec<f64> {
    synth_generate(family, label, count, seed)
        .unwrap()
        .items()
        .iter()
        .map(|img| domain_oracle_score(img, family).unwrap())
        .collect()
}

#[test]
fn families_are_separated_by_their_oracles() {
    for family in [SyntheticFamily::hue_shift(32), SyntheticFamily::disc_square(32)] {
        let x = scores(&family, DomainLabel::X, 120, 21);
        let y = scores(&family, DomainLabel::Y, 120, 21);
        let x_max = x.iter().copied().fold(f64::MIN, f64::max);
        let y_min = y.iter().copied().fold(f64::MAX, f64::min);
        assert!(x_max < 0.5, "{:?}: X max {x_max}", family.family_id);
        assert!(y_min > 0.5, "{:?}: Y min {y_min}", family.family_id);
    }
}

#[test]
fn disc_square_seed_3_squares_score_above_half() {
    let family = SyntheticFamily::disc_square(32);
    let s = scores(&family, DomainLabel::Y, 50, 3);
    assert!(s.iter().all(|&v| v > 0.5), "{s:?}");
}

#[test]
fn hue_centers_reach_the_ends_of_the_scale() {
    let mut family = SyntheticFamily::hue_shift(32);
    family.hue.x = [30.0, 30.0];
    family.hue.y = [210.0, 210.0];
    let x_max = scores(&family, DomainLabel::X, 100, 5)
        .into_iter()
        .fold(f64::MIN, f64::max);
    let y_min = scores(&family, DomainLabel::Y, 100, 5)
        .into_iter()
        .fold(f64::MAX, f64::min);
    assert!(x_max <= 0.1, "hue 30 max {x_max}");
    assert!(y_min >= 0.9, "hue 210 min {y_min}");
}

#[test]
fn generated_hue_lies_in_the_domain_interval() {
    let family = SyntheticFamily::hue_shift(32);
    for (label, [lo, hi]) in [(DomainLabel::X, family.hue.x), (DomainLabel::Y, family.hue.y)] {
        for img in synth_generate(&family, label, 100, 9).unwrap().items() {
            let h = mean_hue(img).unwrap();
            assert!(h >= lo - 0.5 && h <= hi + 0.5, "{label}: {h}");
        }
    }
}

fn recolor(img: &Image, f: impl Fn(f64) -> f64) -> Image {
    let pixels = img
        .pixels()
        .chunks_exact(3)
        .flat_map(|p| {
            let unit = [0, 1, 2].map(|c| (f64::from(p[c]) + 1.0) / 2.0);
            let (h, s, v) = rgb_to_hsv(unit);
            hsv_to_rgb(f(h), s, v).map(normalize)
        })
        .collect();
    Image::new(img.height(), img.width(), pixels).unwrap()
}

fn normalize(c: f64) -> f32 {
    multihop::domains::image::normalize_value((c.clamp(0.0, 1.0) * 255.0).round() as f32)
}

#[test]
fn mirrored_hue_mirrors_the_score() {
    let family = SyntheticFamily::hue_shift(32);
    let centers_sum = family.hue.center(DomainLabel::X) + family.hue.center(DomainLabel::Y);
    for (i, theta) in (0..360).step_by(7).enumerate() {
        let mut f = family.clone();
        f.hue.x = [0.0, 0.0];
        let base = synth_generate(&f, DomainLabel::X, 1, i as u64).unwrap().items()[0].clone();
        let img = recolor(&base, |_| f64::from(theta));
        let mirrored = recolor(&base, |_| centers_sum - f64::from(theta));
        let s = domain_oracle_score(&img, &family).unwrap();
        let m = domain_oracle_score(&mirrored, &family).unwrap();
        assert!((s + m - 1.0).abs() <= 0.02, "theta {theta}: {s} vs {m}");
    }
}

#[test]
fn hues_between_the_centers_score_by_distance_on_either_arc() {
    let family = SyntheticFamily::hue_shift(32);
    let mut f = family.clone();
    f.hue.x = [0.0, 0.0];
    let base = synth_generate(&f, DomainLabel::X, 1, 2).unwrap().items()[0].clone();
    for (theta, expected) in [
        (120.0, 0.5),
        (300.0, 0.5),
        (75.0, 0.25),
        (345.0, 0.25),
        (165.0, 0.75),
        (255.0, 0.75),
    ] {
        let s = domain_oracle_score(&recolor(&base, |_| theta), &family).unwrap();
        assert!((s - expected).abs() <= 0.02, "theta {theta}: {s}");
    }
}

#[test]
fn degenerate_images_score_one_half() {
    let gray = Image::filled(32, 32, 0.1).unwrap();
    let black = Image::filled(32, 32, -1.0).unwrap();
    for family in [SyntheticFamily::hue_shift(32), SyntheticFamily::disc_square(32)] {
        assert_eq!(domain_oracle_score(&gray, &family).unwrap(), 0.5);
        assert_eq!(domain_oracle_score(&black, &family).unwrap(), 0.5);
    }
}

#[test]
fn oracle_rejects_mismatched_sizes() {
    let img = Image::filled(16, 16, 0.0).unwrap();
    let err = domain_oracle_score(&img, &SyntheticFamily::disc_square(32)).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn generation_is_a_pure_function_of_its_inputs() {
    for family in [SyntheticFamily::hue_shift(32), SyntheticFamily::disc_square(32)] {
        let a = synth_generate(&family, DomainLabel::X, 100, 7).unwrap();
        let b = synth_generate(&family, DomainLabel::X, 100, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&family, DomainLabel::X, 100, 8).unwrap();
        assert_ne!(a.items(), c.items());
        let y = synth_generate(&family, DomainLabel::Y, 100, 7).unwrap();
        assert_ne!(a.items(), y.items());
    }
}

#[test]
fn zero_count_is_a_configuration_error() {
    let err = synth_generate(&SyntheticFamily::hue_shift(32), DomainLabel::X, 0, 1).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn written_pngs_load_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let family = SyntheticFamily::disc_square(32);
    let ds = synth_generate(&family, DomainLabel::Y, 12, 4).unwrap();
    let paths = write_pngs(ds.items(), dir.path(), "y").unwrap();
    assert_eq!(paths.len(), 12);
    let loaded = load_unpaired_dataset(dir.path(), DomainLabel::Y, 32).unwrap();
    assert_eq!(loaded.items(), ds.items());
    assert_eq!(loaded.label(), DomainLabel::Y);
}

#[test]
fn loading_resizes_sorts_and_skips_undecodable_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut big = ::image::RgbImage::new(64, 64);
    for (x, _, p) in big.enumerate_pixels_mut() {
        *p = ::image::Rgb([if x < 32 { 0 } else { 255 }, 127, 255]);
    }
    big.save(dir.path().join("b.png")).unwrap();
    ::image::RgbImage::from_pixel(8, 8, ::image::Rgb([255, 0, 0]))
        .save(dir.path().join("a.png"))
        .unwrap();
    std::fs::write(dir.path().join("c.png"), b"not an image").unwrap();

    let ds = load_unpaired_dataset(dir.path(), DomainLabel::X, 16).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.image_shape(), (16, 16));
    assert_eq!(ds.items()[0].pixel(3, 3), [1.0, -1.0, -1.0]);
    assert_eq!(ds.items()[1].pixel(0, 0)[0], -1.0);
    assert_eq!(ds.items()[1].pixel(0, 15)[0], 1.0);
    assert!(ds
        .items()
        .iter()
        .flat_map(|i| i.pixels())
        .all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn loading_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_unpaired_dataset(dir.path(), DomainLabel::X, 32),
        Err(Error::EmptyDataset(_))
    ));
    std::fs::write(dir.path().join("junk.png"), b"junk").unwrap();
    assert!(matches!(
        load_unpaired_dataset(dir.path(), DomainLabel::X, 32),
        Err(Error::EmptyDataset(_))
    ));
    let missing = dir.path().join("missing");
    let err = load_unpaired_dataset(&missing, DomainLabel::X, 32).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("missing"));
}

#[test]
fn batches_are_deterministic_and_labelled() {
    let ds = synth_generate(&SyntheticFamily::hue_shift(16), DomainLabel::Y, 10, 2).unwrap();
    let a = sample_batch(&ds, 6, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = sample_batch(&ds, 6, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);
    assert_eq!(a.label, DomainLabel::Y);
    assert!(a.images.iter().all(|img| ds.items().contains(img)));
    assert!(sample_batch(&ds, 0, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
}

#[test]
fn family_descriptor_round_trips_through_toml() {
    let mut family = SyntheticFamily::hue_shift(64);
    family.hue.y = [200.0, 220.0];
    assert_eq!(SyntheticFamily::from_toml(&family.to_toml()).unwrap(), family);
    assert!(SyntheticFamily::from_toml("family_id = \"hue-shift\"\nimage_size = 30\n").is_err());
}

proptest! {
    #[test]
    fn ingestion_round_trip_is_within_one_level(values in proptest::collection::vec(-1.0f32..=1.0, 48)) {
        let img = Image::new(4, 4, values).unwrap();
        let back = Image::from_rgb8(&img.to_rgb8()).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            prop_assert!((a - b).abs() <= 1.0 / 127.5 / 2.0 + 1e-6);
        }
    }

    #[test]
    fn oracle_scores_lie_in_the_unit_interval(seed in 0u64..1000, theta in 0.0f64..TAU) {
        let family = SyntheticFamily::hue_shift(16);
        let base = synth_generate(&family, DomainLabel::X, 1, seed).unwrap().items()[0].clone();
        let img = recolor(&base, |_| theta.to_degrees());
        let s = domain_oracle_score(&img, &family).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }
}
