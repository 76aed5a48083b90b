//! The per-hop update schedule, run loop, checkpoints and training log.
//!
//! Every step walks the hops `n = 1..=h`. At each hop both generators take
//! one step from the current running images, then D_X, D_Y and the hybrid
//! discriminator D_H take one step each. The images carried into hop `n + 1`
//! are the hop-`n` outputs computed before that hop's updates; no gradient
//! flows between hops, so memory per step does not grow with `h`.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod step;

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{AdamHyper, AdamState};
pub use checkpoint::{load_bundle, load_checkpoint, save_checkpoint, FORMAT_VERSION};
pub use config::TrainingConfig;

use crate::domains::dataset::{sample_batch, Batch, UnpairedDataset};
use crate::error::{Error, Result};
use crate::losses::{Direction, HybridnessTarget, LossBreakdown};
use crate::networks::{ModelBundle, ParamSet};
use crate::tensor::Tensor;
use step::{classifier_step, direction_roles, discriminator_step, generator_hop};

/// File name of the checkpoint written when a run completes.
pub const FINAL_CHECKPOINT: &str = "final.safetensors";
/// File name of the append-only training log inside the output directory.
pub const LOG_FILE: &str = "train_log.jsonl";

/// Names of the five networks, in canonical order.
pub const NETWORK_NAMES: [&str; 5] = ["gen_g", "gen_f", "disc_x", "disc_y", "disc_h"];

/// Adam moments for each of the five networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub gen_g: AdamState,
    pub gen_f: AdamState,
    pub disc_x: AdamState,
    pub disc_y: AdamState,
    pub disc_h: AdamState,
}

impl Optimizers {
    pub fn new(bundle: &ModelBundle) -> Self {
        Self {
            gen_g: AdamState::new(bundle.gen_g.params()),
            gen_f: AdamState::new(bundle.gen_f.params()),
            disc_x: AdamState::new(bundle.disc_x.params()),
            disc_y: AdamState::new(bundle.disc_y.params()),
            disc_h: AdamState::new(bundle.disc_h.params()),
        }
    }

    /// The states in [`NETWORK_NAMES`] order.
    pub fn as_array(&self) -> [&AdamState; 5] {
        [&self.gen_g, &self.gen_f, &self.disc_x, &self.disc_y, &self.disc_h]
    }
}

/// Parameters in [`NETWORK_NAMES`] order.
pub fn bundle_params(bundle: &ModelBundle) -> [&ParamSet<f32>; 5] {
    [
        bundle.gen_g.params(),
        bundle.gen_f.params(),
        bundle.disc_x.params(),
        bundle.disc_y.params(),
        bundle.disc_h.params(),
    ]
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    pub config: TrainingConfig,
    pub bundle: ModelBundle,
    pub optimizers: Optimizers,
    pub epoch: u64,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl TrainingState {
    /// Fresh state: networks initialized from `config.seed`, whose stream then
    /// continues into batch sampling.
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut bundle = ModelBundle::new(config.generator, config.discriminator, config.h, &mut rng)?;
        bundle.metadata.config_hash = config.hash();
        bundle.metadata.created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let optimizers = Optimizers::new(&bundle);
        Ok(Self {
            config,
            bundle,
            optimizers,
            epoch: 0,
            step: 0,
            rng,
        })
    }
}

/// Which discriminator a critic update trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Critic {
    DiscX,
    DiscY,
    DiscH,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticLoss {
    pub hop: usize,
    pub critic: Critic,
    pub loss: f64,
}

/// Losses of every sub-update in one step, in execution order per kind.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub generator: Vec<LossBreakdown>,
    pub critics: Vec<CriticLoss>,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "update", rename_all = "snake_case")]
pub enum LogRecord {
    Generator {
        step: u64,
        #[serde(flatten)]
        loss: LossBreakdown,
    },
    Critic {
        step: u64,
        #[serde(flatten)]
        loss: CriticLoss,
    },
}

fn check_finite(value: f64, term: &'static str, hop: usize, direction: Option<Direction>) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { term, hop, direction })
    }
}

fn check_breakdown(b: &LossBreakdown) -> Result<()> {
    let d = Some(b.direction);
    check_finite(b.cycle, "cycle", b.hop, d)?;
    check_finite(b.adversarial, "adversarial", b.hop, d)?;
    check_finite(b.hybrid, "hybrid", b.hop, d)?;
    check_finite(b.smoothness, "smoothness", b.hop, d)?;
    check_finite(b.weighted_total, "weighted total", b.hop, d)
}

/// One pass of the hop loop over a pair of batches. Counters are not advanced.
pub fn train_step(state: &mut TrainingState, x_batch: &Batch, y_batch: &Batch) -> Result<StepReport> {
    let h = state.config.h;
    let weights = state.config.weights;
    let hyper = state.config.adam();
    let real_x: Tensor<f32> = x_batch.to_tensor()?;
    let real_y: Tensor<f32> = y_batch.to_tensor()?;
    let size = state.bundle.input_size();
    for t in [&real_x, &real_y] {
        if t.height != size || t.width != size {
            return Err(Error::Contract(format!(
                "batch images are {}x{}, model expects {size}x{size}",
                t.height, t.width
            )));
        }
    }

    let mut report = StepReport::default();
    let mut x_cur = real_x.clone();
    let mut y_cur = real_y.clone();
    for n in 1..=h {
        let b = &mut state.bundle;
        let opt = &mut state.optimizers;

        // Y -> X hop with F as it stands before this hop's updates.
        let y_next = b.gen_f.forward(&y_cur)?;

        let target = HybridnessTarget::new(n, h, Direction::XToY)?;
        let roles = direction_roles(Direction::XToY, &b.gen_g, &b.gen_f, &b.disc_x, &b.disc_y, &b.disc_h);
        let g_hop = generator_hop(&roles, &x_cur, target, &weights)?;
        check_breakdown(&g_hop.breakdown)?;
        opt.gen_g.step(b.gen_g.params_mut(), &g_hop.main_grads, &hyper);
        opt.gen_f.step(b.gen_f.params_mut(), &g_hop.back_grads, &hyper);
        report.generator.push(g_hop.breakdown);
        let x_next = g_hop.current;

        let target = HybridnessTarget::new(n, h, Direction::YToX)?;
        let roles = direction_roles(Direction::YToX, &b.gen_g, &b.gen_f, &b.disc_x, &b.disc_y, &b.disc_h);
        let f_hop = generator_hop(&roles, &y_cur, target, &weights)?;
        check_breakdown(&f_hop.breakdown)?;
        opt.gen_f.step(b.gen_f.params_mut(), &f_hop.main_grads, &hyper);
        opt.gen_g.step(b.gen_g.params_mut(), &f_hop.back_grads, &hyper);
        report.generator.push(f_hop.breakdown);

        let (loss, grads) = discriminator_step(&b.disc_x, &real_x, &y_next)?;
        let loss = f64::from(loss);
        check_finite(loss, "adversarial (discriminator)", n, Some(Direction::YToX))?;
        opt.disc_x.step(b.disc_x.params_mut(), &grads, &hyper);
        report.critics.push(CriticLoss {
            hop: n,
            critic: Critic::DiscX,
            loss,
        });

        let (loss, grads) = discriminator_step(&b.disc_y, &real_y, &x_next)?;
        let loss = f64::from(loss);
        check_finite(loss, "adversarial (discriminator)", n, Some(Direction::XToY))?;
        opt.disc_y.step(b.disc_y.params_mut(), &grads, &hyper);
        report.critics.push(CriticLoss {
            hop: n,
            critic: Critic::DiscY,
            loss,
        });

        let (loss, grads) = classifier_step(&b.disc_h, &real_x, &real_y)?;
        let loss = f64::from(loss);
        check_finite(loss, "hybrid classifier", n, None)?;
        opt.disc_h.step(b.disc_h.params_mut(), &grads, &hyper);
        report.critics.push(CriticLoss {
            hop: n,
            critic: Critic::DiscH,
            loss,
        });

        x_cur = x_next;
        y_cur = y_next;
    }
    Ok(report)
}

/// Trains from scratch and returns the path of the final checkpoint.
pub fn train(
    config: &TrainingConfig,
    dataset_x: &UnpairedDataset,
    dataset_y: &UnpairedDataset,
    output_dir: &Path,
) -> Result<PathBuf> {
    let state = TrainingState::new(config.clone())?;
    let mut out = prepare_output(output_dir, true)?;
    run(state, dataset_x, dataset_y, &mut out)
}

/// Continues a run from `checkpoint`, which must have been produced with a
/// config of the same hash. `epochs` and `checkpoint_interval` come from `config`.
pub fn resume(
    config: &TrainingConfig,
    dataset_x: &UnpairedDataset,
    dataset_y: &UnpairedDataset,
    output_dir: &Path,
    checkpoint: &Path,
) -> Result<PathBuf> {
    config.validate()?;
    let mut state = load_checkpoint(checkpoint)?;
    let current = config.hash();
    if state.bundle.metadata.config_hash != current {
        return Err(Error::ResumeMismatch {
            checkpoint: state.bundle.metadata.config_hash.clone(),
            current,
        });
    }
    state.config = config.clone();
    let mut out = prepare_output(output_dir, false)?;
    run(state, dataset_x, dataset_y, &mut out)
}

struct Output {
    dir: PathBuf,
    log: BufWriter<File>,
}

fn prepare_output(dir: &Path, fresh: bool) -> Result<Output> {
    let not_writable =
        |e: std::io::Error| Error::Config(format!("output directory {} is not writable: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(not_writable)?;
    let log_path = dir.join(LOG_FILE);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log_path)
        .map_err(not_writable)?;
    Ok(Output {
        dir: dir.to_path_buf(),
        log: BufWriter::new(file),
    })
}

fn write_log(out: &mut Output, step: u64, report: &StepReport) -> Result<()> {
    let path = out.dir.join(LOG_FILE);
    let mut emit = |record: &LogRecord| -> Result<()> {
        serde_json::to_writer(&mut out.log, record).map_err(|e| Error::io(&path, e.into()))?;
        out.log.write_all(b"\n").map_err(|e| Error::io(&path, e))
    };
    for loss in &report.generator {
        emit(&LogRecord::Generator { step, loss: *loss })?;
    }
    for loss in &report.critics {
        emit(&LogRecord::Critic { step, loss: *loss })?;
    }
    Ok(())
}

fn run(
    mut state: TrainingState,
    dataset_x: &UnpairedDataset,
    dataset_y: &UnpairedDataset,
    out: &mut Output,
) -> Result<PathBuf> {
    let size = state.bundle.input_size();
    for ds in [dataset_x, dataset_y] {
        if ds.image_shape() != (size, size) {
            let (h, w) = ds.image_shape();
            return Err(Error::Contract(format!(
                "dataset {} holds {h}x{w} images, model expects {size}x{size}",
                ds.source()
            )));
        }
    }
    let per_epoch = state.config.resolved_steps_per_epoch(dataset_x.len(), dataset_y.len());
    let total = state.config.epochs * per_epoch;
    let interval = state.config.checkpoint_interval;
    log::info!(
        "training {total} steps ({} epochs x {per_epoch}) from step {}",
        state.config.epochs,
        state.step
    );
    while state.step < total {
        let x_batch = sample_batch(dataset_x, state.config.batch_size, &mut state.rng)?;
        let y_batch = sample_batch(dataset_y, state.config.batch_size, &mut state.rng)?;
        let report = train_step(&mut state, &x_batch, &y_batch)?;
        state.step += 1;
        state.epoch = state.step / per_epoch;
        write_log(out, state.step, &report)?;
        if state.step.is_multiple_of(50) || state.step == total {
            let last = report.generator.iter().rev().take(2);
            let totals: Vec<String> = last
                .map(|b| format!("{}={:.4}", b.direction, b.weighted_total))
                .collect();
            log::info!("step {}/{total} final-hop losses {}", state.step, totals.join(" "));
        }
        if interval > 0 && state.step.is_multiple_of(interval) && state.step < total {
            out.log.flush().map_err(|e| Error::io(out.dir.join(LOG_FILE), e))?;
            save_checkpoint(
                &state,
                &out.dir.join(format!("checkpoint-{:08}.safetensors", state.step)),
            )?;
        }
    }
    out.log.flush().map_err(|e| Error::io(out.dir.join(LOG_FILE), e))?;
    let final_path = out.dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&state, &final_path)?;
    Ok(final_path)
}
