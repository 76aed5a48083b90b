use multihop::domains::{synth_generate, DomainLabel, Image, SyntheticFamily, UnpairedDataset};
use multihop::evaluation::{
    compare_ablations, compensated_sum, evaluate, hop_curve, mean_oracle_score, preservation_score, write_report,
    CURVE_FILE, REPORT_FILE,
};
use multihop::inference::{read_inputs, translate, translate_with_bundle, write_sequences, TranslationRequest};
use multihop::losses::Direction;
use multihop::networks::{hop_sequence, ModelBundle};
use multihop::training::{save_checkpoint, TrainingConfig, TrainingState};
use multihop::Error;
use proptest::prelude::*;

fn bundle(h: usize) -> ModelBundle {
    let mut config = TrainingConfig::tiny();
    config.h = h;
    config.generator.input_size = 16;
    TrainingState::new(config).unwrap().bundle
}

fn images(label: DomainLabel, n: usize) -> UnpairedDataset {
    synth_generate(&SyntheticFamily::hue_shift(16), label, n, 3).unwrap()
}

#[test]
fn zero_hops_return_the_input_exactly() {
    let b = bundle(4);
    let ds = images(DomainLabel::X, 3);
    for emit in [true, false] {
        let req = TranslationRequest {
            direction: Direction::XToY,
            hops: Some(0),
            emit_intermediates: emit,
        };
        let seqs = translate_with_bundle(&b, ds.items(), &req).unwrap();
        for (s, img) in seqs.iter().zip(ds.items()) {
            assert_eq!(s.frames, vec![(0, img.clone())]);
        }
    }
}

#[test]
fn default_hop_count_is_the_trained_one_and_extrapolation_works() {
    let b = bundle(4);
    let ds = images(DomainLabel::X, 2);
    let seqs = translate_with_bundle(&b, ds.items(), &TranslationRequest::new(Direction::XToY)).unwrap();
    assert_eq!(seqs[0].hops, 4);
    assert_eq!(seqs[0].frames.len(), 5);
    let req = TranslationRequest {
        hops: Some(8),
        ..TranslationRequest::new(Direction::XToY)
    };
    let long = translate_with_bundle(&b, ds.items(), &req).unwrap();
    assert_eq!(long[0].images().unwrap().len(), 9);
    // the first four hops of an 8-hop run are the 4-hop run
    assert_eq!(&long[0].frames[..5], &seqs[0].frames[..]);
    let expected = hop_sequence(&b.gen_g, &ds.items()[1], 8).unwrap();
    for (k, img) in expected.iter().enumerate() {
        let got = long[1].frame(k).unwrap();
        let diff = img
            .pixels()
            .iter()
            .zip(got.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0f32, f32::max);
        assert!(diff <= 1e-5, "hop {k}: {diff}");
    }
}

#[test]
fn final_only_keeps_just_the_last_hop() {
    let b = bundle(4);
    let ds = images(DomainLabel::Y, 2);
    let full = translate_with_bundle(&b, ds.items(), &TranslationRequest::new(Direction::YToX)).unwrap();
    let req = TranslationRequest {
        emit_intermediates: false,
        ..TranslationRequest::new(Direction::YToX)
    };
    let last = translate_with_bundle(&b, ds.items(), &req).unwrap();
    assert_eq!(last[0].frames.len(), 1);
    assert_eq!(last[0].frames[0].0, 4);
    assert_eq!(last[0].final_image(), full[0].final_image());
    assert!(last[0].images().is_none());
}

#[test]
fn each_direction_uses_only_its_own_generator() {
    let b = bundle(2);
    let ds = images(DomainLabel::X, 2);
    for direction in [Direction::XToY, Direction::YToX] {
        let req = TranslationRequest::new(direction);
        let reference = translate_with_bundle(&b, ds.items(), &req).unwrap();
        let mut other = b.clone();
        let unused = match direction {
            Direction::XToY => other.gen_f.params_mut(),
            Direction::YToX => other.gen_g.params_mut(),
        };
        for t in unused.iter_mut() {
            t.data.iter_mut().for_each(|v| *v = -*v * 3.0 + 0.1);
        }
        assert_eq!(translate_with_bundle(&other, ds.items(), &req).unwrap(), reference);
        let mut used = b.clone();
        let p = match direction {
            Direction::XToY => used.gen_g.params_mut(),
            Direction::YToX => used.gen_f.params_mut(),
        };
        p.set_scalar(0, p.scalar(0) + 0.5);
        assert_ne!(translate_with_bundle(&used, ds.items(), &req).unwrap(), reference);
    }
}

#[test]
fn batched_and_single_translation_agree() {
    let b = bundle(3);
    let ds = images(DomainLabel::X, 11);
    let req = TranslationRequest::new(Direction::XToY);
    let batched = translate_with_bundle(&b, ds.items(), &req).unwrap();
    for (img, seq) in ds.items().iter().zip(&batched) {
        let single = translate_with_bundle(&b, std::slice::from_ref(img), &req).unwrap();
        for ((_, a), (_, s)) in seq.frames.iter().zip(&single[0].frames) {
            let diff = a
                .pixels()
                .iter()
                .zip(s.pixels())
                .map(|(p, q)| (p - q).abs())
                .fold(0f32, f32::max);
            assert!(diff <= 1e-5, "{diff}");
        }
    }
}

#[test]
fn wrong_image_size_is_a_contract_error() {
    let b = bundle(2);
    let img = Image::filled(32, 32, 0.0).unwrap();
    let err = translate_with_bundle(&b, &[img], &TranslationRequest::new(Direction::XToY)).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn checkpoint_translation_writes_named_frames_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = TrainingConfig::tiny();
    config.generator.input_size = 16;
    let state = TrainingState::new(config).unwrap();
    let ckpt = dir.path().join("m.safetensors");
    save_checkpoint(&state, &ckpt).unwrap();

    let ds = images(DomainLabel::X, 2);
    let inputs = dir.path().join("in");
    multihop::domains::synth::write_pngs(ds.items(), &inputs, "img").unwrap();
    let read = read_inputs(&inputs).unwrap();
    assert_eq!(
        read.iter().map(|(s, _)| s.as_str()).collect::<Vec<_>>(),
        ["img_00000", "img_00001"]
    );
    let (stems, imgs): (Vec<String>, Vec<Image>) = read.into_iter().unzip();
    let req = TranslationRequest {
        hops: Some(8),
        ..TranslationRequest::new(Direction::XToY)
    };
    let seqs = translate(&ckpt, &imgs, &req).unwrap();
    let out = dir.path().join("out");
    let manifest = write_sequences(&seqs, &stems, &out).unwrap();
    assert_eq!(manifest.len(), 2);
    assert_eq!(manifest[0].files.len(), 9);
    assert!(out.join("img_00001_hop8.png").exists());
    let hop0 = read_inputs(&out.join("img_00000_hop0.png")).unwrap();
    assert_eq!(hop0[0].1, imgs[0]);
    assert!(out.join("manifest.json").exists());

    let missing = translate(&dir.path().join("nope.safetensors"), &imgs, &req).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }));
}

#[test]
fn hop_curve_starts_at_the_raw_oracle_mean_and_has_n_plus_one_points() {
    let b = bundle(4);
    let family = SyntheticFamily::hue_shift(16);
    let ds = images(DomainLabel::X, 6);
    for n in [0, 1, 5] {
        let curve = hop_curve(&b, &ds, &family, n).unwrap();
        assert_eq!(curve.means.len(), n + 1);
        assert_eq!(curve.means[0], mean_oracle_score(ds.items(), &family).unwrap());
        assert_eq!(curve.samples, 6);
        assert_eq!(curve.direction, Direction::XToY);
        assert!(curve.means.iter().all(|m| (0.0..=1.0).contains(m)));
    }
    let wrong = SyntheticFamily::hue_shift(32);
    assert!(matches!(hop_curve(&b, &ds, &wrong, 2), Err(Error::Contract(_))));
}

#[test]
fn reports_compare_and_serialize() {
    let b = bundle(2);
    let family = SyntheticFamily::hue_shift(16);
    let dx = images(DomainLabel::X, 4);
    let dy = images(DomainLabel::Y, 4);
    let report = evaluate(&b, &[&dx, &dy], &family, 3, None).unwrap();
    assert_eq!(report.directions.len(), 2);
    assert_eq!(report.provenance.eval_hops, 3);
    let yx = report.direction(Direction::YToX).unwrap();
    assert_eq!(yx.inter_hop_l1.len(), 3);
    assert!((0.0..=1.0).contains(&yx.membership));
    assert!(report.note.contains("oracle"));

    let same = compare_ablations(&report, &report);
    assert_eq!(same.preservation.delta, 0.0);
    assert_eq!(same.smoothness.delta, 0.0);
    assert!(same
        .directions
        .iter()
        .all(|d| d.membership.delta == 0.0 && d.preservation.delta == 0.0));
    assert_eq!(same.inter_hop_l1_a, same.inter_hop_l1_b);

    let other = evaluate(&bundle(5), &[&dx, &dy], &family, 3, None).unwrap();
    let cmp = compare_ablations(&report, &other);
    assert_eq!(cmp.preservation.delta, other.preservation() - report.preservation());

    let dir = tempfile::tempdir().unwrap();
    write_report(&report, dir.path()).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap()).unwrap();
    assert!(json["note"].is_string());
    let csv = std::fs::read_to_string(dir.path().join(CURVE_FILE)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "direction,hop,mean_score");
    assert_eq!(lines.len(), 1 + 2 * 4);
    assert!(lines[1].starts_with("x_to_y,0,"));
}

#[test]
fn preservation_of_negated_ones_is_zero() {
    let ones = Image::filled(8, 8, 1.0).unwrap();
    let neg = Image::filled(8, 8, -1.0).unwrap();
    assert_eq!(preservation_score(std::slice::from_ref(&ones), &[neg]).unwrap(), 0.0);
    assert_eq!(preservation_score(std::slice::from_ref(&ones), std::slice::from_ref(&ones)).unwrap(), 1.0);
    let small = Image::filled(4, 4, 1.0).unwrap();
    assert!(matches!(preservation_score(&[ones], &[small]), Err(Error::Contract(_))));
}

fn image_strategy() -> impl Strategy<Value = Image> {
    proptest::collection::vec(-1.0f32..=1.0, 4 * 4 * 3).prop_map(|p| Image::new(4, 4, p).unwrap())
}

proptest! {
    #[test]
    fn preservation_matches_brute_force_and_is_bounded(
        pairs in proptest::collection::vec((image_strategy(), image_strategy()), 1..6)
    ) {
        let (a, b): (Vec<Image>, Vec<Image>) = pairs.into_iter().unzip();
        let mut total = 0.0f64;
        let mut count = 0usize;
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.pixels().iter().zip(y.pixels()) {
                total += (f64::from(*p) - f64::from(*q)).abs();
                count += 1;
            }
        }
        let expected = 1.0 - total / count as f64 / 2.0;
        let got = preservation_score(&a, &b).unwrap();
        prop_assert!((got - expected).abs() <= 1e-6 * expected.abs().max(1e-12) + 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn compensated_sum_is_order_independent(mut v in proptest::collection::vec(-1e6f64..1e6, 1..200)) {
        let forward = compensated_sum(v.iter().copied());
        v.reverse();
        let backward = compensated_sum(v.iter().copied());
        prop_assert!((forward - backward).abs() <= 1e-9 * forward.abs().max(1.0));
    }
}
