//! `multihop`: synthesize toy domains, train, translate and evaluate.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod overrides;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use toml::Table;

use multihop::domains::synth::write_pngs;
use multihop::domains::{load_unpaired_dataset, synth_generate, DomainLabel, SyntheticFamily};
use multihop::evaluation::{evaluate, write_report};
use multihop::inference::{read_inputs, translate_with_bundle, write_sequences, TranslationRequest};
use multihop::losses::Direction;
use multihop::training::{self, load_bundle, TrainingConfig};
use multihop::{Error, Result};

use overrides::Override;

#[derive(Parser, Debug)]
#[command(name = "multihop", version, about = "Multi-hop unpaired image-to-image translation")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic two-domain PNG dataset and its family descriptor.
    Synth(SynthArgs),
    /// Train a model. Config values can be overridden with `--dotted.key=value`.
    Train(TrainArgs),
    /// Translate PNGs with a checkpoint.
    Translate(TranslateArgs),
    /// Score a checkpoint on a synthetic family.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    /// Family descriptor TOML; overrides `--family` and `--image-size`.
    #[arg(long)]
    family_file: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    image_size: usize,
    /// Images per domain.
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FamilyArg {
    HueShift,
    DiscSquare,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML config; an optional `[data]` section names the `x` and `y` directories.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    /// Continue from a checkpoint written with the same config.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum DirectionArg {
    XToY,
    YToX,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::XToY => Direction::XToY,
            DirectionArg::YToX => Direction::YToX,
        }
    }
}

#[derive(Args, Debug)]
struct TranslateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A PNG file or a directory of PNGs.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "x-to-y")]
    direction: DirectionArg,
    /// Defaults to the trained hop count.
    #[arg(long)]
    hops: Option<usize>,
    /// Write only the last hop.
    #[arg(long)]
    final_only: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Family descriptor TOML, as written by `synth`.
    #[arg(long)]
    family: PathBuf,
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    /// Defaults to the trained hop count.
    #[arg(long)]
    hops: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Dataset locations from the `[data]` config section.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    x: Option<PathBuf>,
    y: Option<PathBuf>,
}

const FAMILY_FILE: &str = "family.toml";

fn read_text(path: &Path, what: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {what} {}: {e}", path.display())))
}

fn synth(args: SynthArgs) -> Result<()> {
    let family = match (&args.family_file, args.family) {
        (Some(path), _) => SyntheticFamily::from_toml(&read_text(path, "family descriptor")?)?,
        (None, Some(FamilyArg::HueShift)) => SyntheticFamily::hue_shift(args.image_size),
        (None, Some(FamilyArg::DiscSquare)) => SyntheticFamily::disc_square(args.image_size),
        (None, None) => return Err(Error::Config("one of --family or --family-file is required".into())),
    };
    family.validate()?;
    log::info!("family:\n{}", family.to_toml());
    for label in [DomainLabel::X, DomainLabel::Y] {
        let ds = synth_generate(&family, label, args.count, args.seed)?;
        let dir = args.out.join(label.to_string());
        write_pngs(ds.items(), &dir, &label.to_string())?;
        log::info!("wrote {} images to {}", ds.len(), dir.display());
    }
    let path = args.out.join(FAMILY_FILE);
    std::fs::write(&path, family.to_toml()).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn train(args: TrainArgs, overrides: &[Override]) -> Result<()> {
    let mut table = match &args.config {
        Some(path) => read_text(path, "config")?
            .parse::<Table>()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        None => Table::new(),
    };
    overrides::apply(&mut table, overrides)?;
    let data: DataSection = match table.remove("data") {
        Some(v) => v.try_into().map_err(|e| Error::Config(format!("[data]: {e}")))?,
        None => DataSection::default(),
    };
    let config: TrainingConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    config.validate()?;
    // paths in the config file are relative to the file
    let base = args.config.as_deref().and_then(Path::parent).unwrap_or(Path::new(""));
    let pick = |flag: Option<PathBuf>, file: Option<PathBuf>, name: &str| {
        flag.or_else(|| file.map(|p| base.join(p)))
            .ok_or_else(|| Error::Config(format!("no {name} dataset: pass --{name} or set data.{name}")))
    };
    let x_dir = pick(args.x, data.x, "x")?;
    let y_dir = pick(args.y, data.y, "y")?;
    log::info!(
        "effective config:\n{}\n[data]\nx = {:?}\ny = {:?}",
        config.to_toml(),
        x_dir.display().to_string(),
        y_dir.display().to_string()
    );

    let size = config.generator.input_size;
    let dx = load_unpaired_dataset(&x_dir, DomainLabel::X, size)?;
    let dy = load_unpaired_dataset(&y_dir, DomainLabel::Y, size)?;
    log::info!("loaded {} X and {} Y images at {size}x{size}", dx.len(), dy.len());
    let path = match &args.resume {
        Some(ckpt) => training::resume(&config, &dx, &dy, &args.out, ckpt)?,
        None => training::train(&config, &dx, &dy, &args.out)?,
    };
    log::info!("wrote {}", path.display());
    Ok(())
}

fn existing(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn translate(args: TranslateArgs) -> Result<()> {
    existing(&args.checkpoint, "checkpoint")?;
    let bundle = load_bundle(&args.checkpoint)?;
    let inputs = read_inputs(&args.input)?;
    let request = TranslationRequest {
        direction: args.direction.into(),
        hops: args.hops,
        emit_intermediates: !args.final_only,
    };
    log::info!(
        "translating {} images {} with {} hops (trained with {})",
        inputs.len(),
        request.direction,
        request.hops.unwrap_or(bundle.trained_hops),
        bundle.trained_hops
    );
    let (stems, images): (Vec<String>, Vec<_>) = inputs.into_iter().unzip();
    let seqs = translate_with_bundle(&bundle, &images, &request)?;
    let manifest = write_sequences(&seqs, &stems, &args.out)?;
    let files: usize = manifest.iter().map(|m| m.files.len()).sum();
    log::info!("wrote {files} images to {}", args.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    existing(&args.checkpoint, "checkpoint")?;
    let family = SyntheticFamily::from_toml(&read_text(&args.family, "family descriptor")?)?;
    let bundle = load_bundle(&args.checkpoint)?;
    if family.image_size != bundle.input_size() {
        return Err(Error::Contract(format!(
            "family image size {} differs from checkpoint input size {}",
            family.image_size,
            bundle.input_size()
        )));
    }
    let mut datasets = Vec::new();
    for (dir, label) in [(&args.x, DomainLabel::X), (&args.y, DomainLabel::Y)] {
        if let Some(dir) = dir {
            datasets.push(load_unpaired_dataset(dir, label, family.image_size)?);
        }
    }
    if datasets.is_empty() {
        return Err(Error::Config("pass --x, --y or both".into()));
    }
    let hops = args.hops.unwrap_or(bundle.trained_hops);
    let refs: Vec<_> = datasets.iter().collect();
    let report = evaluate(&bundle, &refs, &family, hops, Some(&args.checkpoint))?;
    for r in &report.directions {
        let curve: Vec<String> = r.curve.means.iter().map(|m| format!("{m:.3}")).collect();
        log::info!(
            "{} ({:?}, {} images): curve [{}] preservation {:.4} smoothness {:.4}",
            r.curve.direction,
            family.family_id,
            r.curve.samples,
            curve.join(", "),
            r.preservation,
            r.smoothness()
        );
    }
    let (json, csv) = write_report(&report, &args.out)?;
    log::info!("wrote {} and {}", json.display(), csv.display());
    Ok(())
}

/// Keeps large activation buffers on the heap free lists instead of
/// returning them to the kernel after every operation.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn tune_allocator() {
    const THRESHOLD: libc::c_int = 1 << 30;
    // SAFETY: mallopt only adjusts allocator parameters.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, THRESHOLD);
        libc::mallopt(libc::M_TRIM_THRESHOLD, THRESHOLD);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn tune_allocator() {}

fn run(cli: Cli, overrides: &[Override]) -> Result<()> {
    if !overrides.is_empty() && !matches!(cli.command, Command::Train(_)) {
        return Err(Error::Config("--key=value overrides apply only to `train`".into()));
    }
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a, overrides),
        Command::Translate(a) => translate(a),
        Command::Eval(a) => eval(a),
    }
}

fn main() -> ExitCode {
    tune_allocator();
    let (args, overrides) = match overrides::extract(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
