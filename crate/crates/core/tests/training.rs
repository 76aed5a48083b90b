use multihop::domains::{sample_batch, synth_generate, Batch, DomainLabel, SyntheticFamily, UnpairedDataset};
use multihop::losses::{Direction, HybridnessTarget, LossWeights};
use multihop::networks::{DiscriminatorSpec, GeneratorSpec};
use multihop::tensor::Tensor;
use multihop::training::step::{classifier_step, generator_hop, generator_hop_loss, GeneratorRoles};
use multihop::training::{
    load_checkpoint, resume, save_checkpoint, train, train_step, LogRecord, TrainingConfig, TrainingState,
    FINAL_CHECKPOINT, LOG_FILE,
};
use multihop::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(h: usize) -> TrainingConfig {
    TrainingConfig {
        h,
        batch_size: 2,
        epochs: 2,
        steps_per_epoch: Some(2),
        generator: GeneratorSpec {
            base_width: 4,
            n_residual_blocks: 1,
            input_size: 16,
        },
        discriminator: DiscriminatorSpec {
            base_width: 4,
            n_layers: 3,
        },
        ..TrainingConfig::default()
    }
}

fn datasets(size: usize) -> (UnpairedDataset, UnpairedDataset) {
    let family = SyntheticFamily::hue_shift(size);
    (
        synth_generate(&family, DomainLabel::X, 8, 1).unwrap(),
        synth_generate(&family, DomainLabel::Y, 8, 1).unwrap(),
    )
}

fn batches(state: &mut TrainingState, dx: &UnpairedDataset, dy: &UnpairedDataset) -> (Batch, Batch) {
    let bs = state.config.batch_size;
    (
        sample_batch(dx, bs, &mut state.rng).unwrap(),
        sample_batch(dy, bs, &mut state.rng).unwrap(),
    )
}

fn trained_state(steps: usize) -> TrainingState {
    let (dx, dy) = datasets(16);
    let mut state = TrainingState::new(small_config(2)).unwrap();
    for _ in 0..steps {
        let (bx, by) = batches(&mut state, &dx, &dy);
        train_step(&mut state, &bx, &by).unwrap();
        state.step += 1;
    }
    state
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let state = trained_state(2);
    let path = dir.path().join("a.safetensors");
    save_checkpoint(&state, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, state);
    let again = dir.path().join("b.safetensors");
    save_checkpoint(&loaded, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

fn bump_version(bytes: &mut [u8]) {
    let needle = b"format_version\\\":1";
    let at = bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .expect("version field in header");
    bytes[at + needle.len() - 1] = b'2';
}

#[test]
fn newer_format_version_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.safetensors");
    save_checkpoint(&trained_state(0), &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bump_version(&mut bytes);
    std::fs::write(&path, bytes).unwrap();
    match load_checkpoint(&path) {
        Err(Error::UnsupportedVersion { found: 2, supported: 1 }) => {}
        other => panic!("expected a version error, got {other:?}"),
    }
}

#[test]
fn damaged_archives_are_integrity_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.safetensors");
    save_checkpoint(&trained_state(0), &path).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut flipped = good.clone();
    let last = flipped.len() - 3;
    flipped[last] ^= 0x40;
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Integrity(_))));

    std::fs::write(&path, &good[..good.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Integrity(_))));

    std::fs::write(&path, b"garbage").unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Integrity(_))));
}

#[test]
fn checkpoint_size_does_not_depend_on_hop_count() {
    let dir = tempfile::tempdir().unwrap();
    let sizes: Vec<u64> = [2, 8]
        .iter()
        .map(|&h| {
            let state = TrainingState::new(small_config(h)).unwrap();
            let path = dir.path().join(format!("h{h}.safetensors"));
            save_checkpoint(&state, &path).unwrap();
            std::fs::metadata(&path).unwrap().len()
        })
        .collect();
    assert_eq!(sizes[0], sizes[1]);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (dx, dy) = datasets(16);
    let root = tempfile::tempdir().unwrap();
    let mut config = small_config(2);
    config.checkpoint_interval = 2;
    let full = train(&config, &dx, &dy, &root.path().join("full")).unwrap();
    let mid = root.path().join("full").join("checkpoint-00000002.safetensors");
    assert!(mid.exists());
    assert_eq!(load_checkpoint(&mid).unwrap().step, 2);

    let resumed = resume(&config, &dx, &dy, &root.path().join("resumed"), &mid).unwrap();
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&resumed).unwrap());

    let mut longer = config.clone();
    longer.epochs = 3;
    let extended = resume(&longer, &dx, &dy, &root.path().join("longer"), &full).unwrap();
    assert_eq!(load_checkpoint(&extended).unwrap().step, 6);
}

#[test]
fn resume_refuses_a_different_config() {
    let (dx, dy) = datasets(16);
    let root = tempfile::tempdir().unwrap();
    let config = small_config(2);
    let full = train(&config, &dx, &dy, &root.path().join("a")).unwrap();
    let mut other = config.clone();
    other.weights.zeta = 0.0;
    let err = resume(&other, &dx, &dy, &root.path().join("b"), &full).unwrap_err();
    assert!(matches!(err, Error::ResumeMismatch { .. }));
}

#[test]
fn identical_runs_write_identical_logs() {
    let (dx, dy) = datasets(16);
    let root = tempfile::tempdir().unwrap();
    let config = small_config(2);
    train(&config, &dx, &dy, &root.path().join("a")).unwrap();
    train(&config, &dx, &dy, &root.path().join("b")).unwrap();
    let a = std::fs::read_to_string(root.path().join("a").join(LOG_FILE)).unwrap();
    let b = std::fs::read_to_string(root.path().join("b").join(LOG_FILE)).unwrap();
    assert_eq!(a, b);

    // 4 steps x 2 hops x (2 generator + 3 critic) records
    let records: Vec<LogRecord> = a.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 4 * 2 * 5);
    match &records[0] {
        LogRecord::Generator { step, loss } => {
            assert_eq!(*step, 1);
            assert_eq!((loss.hop, loss.direction), (1, Direction::XToY));
        }
        other => panic!("first record should be a generator update, got {other:?}"),
    }
}

#[test]
fn zero_epochs_writes_only_the_initial_checkpoint() {
    let (dx, dy) = datasets(16);
    let root = tempfile::tempdir().unwrap();
    let mut config = small_config(2);
    config.epochs = 0;
    let path = train(&config, &dx, &dy, root.path()).unwrap();
    assert_eq!(path, root.path().join(FINAL_CHECKPOINT));
    let state = load_checkpoint(&path).unwrap();
    let fresh = TrainingState::new(config).unwrap();
    assert_eq!(state.step, 0);
    assert_eq!(state.bundle.gen_g, fresh.bundle.gen_g);
    assert_eq!(state.bundle.disc_h, fresh.bundle.disc_h);
    assert!(std::fs::read_to_string(root.path().join(LOG_FILE)).unwrap().is_empty());
    let files: Vec<_> = std::fs::read_dir(root.path()).unwrap().collect();
    assert_eq!(files.len(), 2);
}

#[test]
fn unwritable_output_is_a_configuration_error() {
    let (dx, dy) = datasets(16);
    let root = tempfile::tempdir().unwrap();
    let blocker = root.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let err = train(&small_config(1), &dx, &dy, &blocker.join("out")).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn mismatched_dataset_size_is_a_contract_error() {
    let (dx, dy) = datasets(32);
    let root = tempfile::tempdir().unwrap();
    let err = train(&small_config(1), &dx, &dy, root.path()).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn zero_rate_and_zero_weights_leave_parameters_unchanged() {
    let (dx, dy) = datasets(16);
    let mut config = small_config(3);
    config.weights = LossWeights::zero();
    let mut state = TrainingState::new(config).unwrap();
    state.config.learning_rate = 0.0;
    let before = state.bundle.clone();
    let (bx, by) = batches(&mut state, &dx, &dy);
    train_step(&mut state, &bx, &by).unwrap();
    assert_eq!(state.bundle, before);
}

#[test]
fn one_hop_runs_six_sub_updates() {
    let (dx, dy) = datasets(16);
    let mut state = TrainingState::new(small_config(1)).unwrap();
    let (bx, by) = batches(&mut state, &dx, &dy);
    let report = train_step(&mut state, &bx, &by).unwrap();
    assert_eq!(report.generator.len() + report.critics.len(), 5);
    let mut state = TrainingState::new(small_config(4)).unwrap();
    let report = train_step(&mut state, &bx, &by).unwrap();
    let hops: Vec<usize> = report.generator.iter().map(|b| b.hop).collect();
    assert_eq!(hops, [1, 1, 2, 2, 3, 3, 4, 4]);
    let targets: Vec<f64> = report
        .generator
        .iter()
        .map(|b| HybridnessTarget::new(b.hop, 4, b.direction).unwrap().value())
        .collect();
    assert_eq!(targets, [0.25, 0.75, 0.5, 0.5, 0.75, 0.25, 1.0, 0.0]);
}

#[test]
fn every_sub_update_moves_all_five_networks() {
    let (dx, dy) = datasets(16);
    let mut state = TrainingState::new(small_config(1)).unwrap();
    let before = state.bundle.clone();
    let (bx, by) = batches(&mut state, &dx, &dy);
    train_step(&mut state, &bx, &by).unwrap();
    assert_ne!(state.bundle.gen_g, before.gen_g);
    assert_ne!(state.bundle.gen_f, before.gen_f);
    assert_ne!(state.bundle.disc_x, before.disc_x);
    assert_ne!(state.bundle.disc_y, before.disc_y);
    assert_ne!(state.bundle.disc_h, before.disc_h);
}

#[test]
fn non_finite_losses_abort_with_a_diagnostic() {
    let (dx, dy) = datasets(16);
    let mut state = TrainingState::new(small_config(2)).unwrap();
    let p = state.bundle.disc_y.params_mut();
    p.set_scalar(0, f32::INFINITY);
    let (bx, by) = batches(&mut state, &dx, &dy);
    let err = train_step(&mut state, &bx, &by).unwrap_err();
    match &err {
        Error::NonFinite { term, hop, direction } => {
            assert_eq!(*term, "adversarial");
            assert_eq!(*hop, 1);
            assert_eq!(*direction, Some(Direction::XToY));
        }
        other => panic!("expected NonFinite, got {other:?}"),
    }
    assert!(err.to_string().contains("hop 1"));
}

fn random_tensor<T: multihop::tensor::Real>(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Tensor<T> {
    let data = (0..3 * n * size * size)
        .map(|_| T::from_f64_lossy(rng.gen_range(-0.9..0.9)))
        .collect();
    Tensor::from_vec(3, n, size, size, data)
}

#[test]
fn generator_update_touches_only_generators() {
    let state = TrainingState::new(small_config(2)).unwrap();
    let b = &state.bundle;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor::<f32>(&mut rng, 2, 16);
    let roles = GeneratorRoles {
        main: &b.gen_g,
        back: &b.gen_f,
        adversary: &b.disc_y,
        hybrid: &b.disc_h,
    };
    let target = HybridnessTarget::new(1, 2, Direction::XToY).unwrap();
    let hop = generator_hop(&roles, &x, target, &LossWeights::default()).unwrap();
    let nonzero = |p: &multihop::networks::ParamSet<f32>| p.iter().any(|t| t.data.iter().any(|v| *v != 0.0));
    assert!(nonzero(&hop.main_grads));
    assert!(nonzero(&hop.back_grads));
    // gradient sets cover exactly the two generators
    assert_eq!(hop.main_grads.layout(), b.gen_g.params().layout());
    assert_eq!(hop.back_grads.layout(), b.gen_f.params().layout());

    let no_cycle = LossWeights {
        gamma: 0.0,
        ..LossWeights::default()
    };
    let hop = generator_hop(&roles, &x, target, &no_cycle).unwrap();
    assert!(!nonzero(&hop.back_grads));

    let (_, grads) = classifier_step(&b.disc_h, &x, &random_tensor(&mut rng, 2, 16)).unwrap();
    assert_eq!(grads.layout(), b.disc_h.params().layout());
}

/// The hop-`n` update treats its input image as a constant: its gradient is
/// the derivative with the previous hop frozen, not through it.
#[test]
fn hop_inputs_are_detached() {
    let mut config = small_config(2);
    config.generator.input_size = 8;
    config.discriminator.n_layers = 2;
    let state = TrainingState::new(config).unwrap();
    let g = state.bundle.gen_g.cast::<f64>();
    let f = state.bundle.gen_f.cast::<f64>();
    let dy = state.bundle.disc_y.cast::<f64>();
    let dh = state.bundle.disc_h.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x0 = random_tensor::<f64>(&mut rng, 1, 8);
    let x1 = g.forward(&x0).unwrap();
    let target = HybridnessTarget::new(2, 2, Direction::XToY).unwrap();
    let weights = LossWeights::default();
    let roles = GeneratorRoles {
        main: &g,
        back: &f,
        adversary: &dy,
        hybrid: &dh,
    };
    let analytic = generator_hop(&roles, &x1, target, &weights).unwrap().main_grads;

    let eps = 1e-5;
    let n = g.params().num_scalars();
    let (mut frozen_ok, mut through_differs) = (0, 0);
    let coords: Vec<usize> = (0..40).map(|_| rng.gen_range(0..n)).collect();
    for &i in &coords {
        let loss_at = |delta: f64, recompute: bool| {
            let mut gp = g.clone();
            let v = gp.params().scalar(i);
            gp.params_mut().set_scalar(i, v + delta);
            let prev = if recompute {
                gp.forward(&x0).unwrap()
            } else {
                x1.clone()
            };
            let roles = GeneratorRoles {
                main: &gp,
                back: &f,
                adversary: &dy,
                hybrid: &dh,
            };
            generator_hop_loss(&roles, &prev, target, &weights).unwrap()
        };
        let a = analytic.scalar(i);
        let frozen = (loss_at(eps, false) - loss_at(-eps, false)) / (2.0 * eps);
        let through = (loss_at(eps, true) - loss_at(-eps, true)) / (2.0 * eps);
        let scale = a.abs().max(frozen.abs()).max(1e-6);
        if (a - frozen).abs() / scale < 1e-3 {
            frozen_ok += 1;
        }
        if (a - through).abs() / scale > 1e-2 {
            through_differs += 1;
        }
    }
    assert!(
        frozen_ok >= 38,
        "{frozen_ok}/40 coordinates match the frozen-input derivative"
    );
    assert!(
        through_differs >= 10,
        "only {through_differs}/40 coordinates differ from the end-to-end derivative"
    );
}

#[test]
fn config_files_mirror_field_names() {
    let text = "h = 3\nlearning_rate = 0.001\nbatch_size = 4\nepochs = 5\nsteps_per_epoch = 7\nseed = 11\ncheckpoint_interval = 2\n[weights]\nzeta = 0.0\n[generator]\nbase_width = 8\nn_residual_blocks = 1\ninput_size = 16\n[discriminator]\nbase_width = 4\nn_layers = 3\n";
    let c = TrainingConfig::from_toml(text).unwrap();
    assert_eq!(
        (c.h, c.batch_size, c.epochs, c.steps_per_epoch, c.seed),
        (3, 4, 5, Some(7), 11)
    );
    assert_eq!(c.weights.zeta, 0.0);
    assert_eq!(c.weights.gamma, 10.0);
    assert_eq!(TrainingConfig::from_toml("hops = 2").unwrap().h, 2);
    assert!(matches!(
        TrainingConfig::from_toml("h = 2\nlearning_rate = 0.0"),
        Err(Error::Config(_))
    ));
}
