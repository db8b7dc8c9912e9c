//! Command-line entry point: `artgan <subcommand> [flags]`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{
    filter_rgb, image_grid, load_images, scan_directory, write_png, BatchSampler, DatasetManifest,
    DEFAULT_RESOLUTION,
};
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate, extract_features, is_feature_file, load_features, Extractor, FeatureSet, KidConfig,
    MetricReport,
};
use crate::model::Generator;
use crate::survey::survey_report;
use crate::tensor::Tensor;
use crate::trainer::{
    checkpoint_path, resume, sample_image, save_checkpoint, train, FidPoint, LossRecord,
    TrainHooks, TrainState,
};

/// Images per row in sample grids.
pub const GRID_COLUMNS: usize = 8;

#[derive(Debug, Parser)]
#[command(name = "artgan", version, about = "Desk-scale style-based GAN toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scan and filter an image directory, writing manifest.json
    Preprocess {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        #[arg(long)]
        augment_flip: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from scratch
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a configuration key, e.g. --set seed=3
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue training from a checkpoint
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        total_iterations: Option<u64>,
        /// Defaults to the checkpoint's directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write N samples from a checkpoint as PNG files
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write grid.png
        #[arg(long)]
        grid: bool,
    },
    /// FID and KID between two image directories or feature files
    Evaluate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        /// pool, randproj-<k>, or file (both inputs are feature files)
        #[arg(long, default_value = "pool")]
        extractor: String,
        #[arg(long)]
        kid_block: Option<usize>,
        #[arg(long, default_value_t = 10)]
        kid_blocks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Resolution images are resized to before feature extraction
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a rating-study CSV
    Survey {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        allow_partial: bool,
    },
    /// preprocess, train, generate, evaluate (and survey if configured)
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the version
    Version,
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("ARTGAN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("ARTGAN_THREADS must be a positive integer, got {raw:?}")))?;
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::debug!("thread pool already initialized; ARTGAN_THREADS ignored");
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Preprocess {
            data_dir,
            resolution,
            augment_flip,
            out,
        } => {
            let mut cfg = RunConfig::default();
            cfg.train.data_dir = Some(data_dir.clone());
            cfg.train.resolution = resolution;
            cfg.train.augment_flip = augment_flip;
            let manifest = preprocess(&data_dir, resolution)?;
            create_dir(&out)?;
            write_text(&out.join("manifest.json"), &manifest.to_json()?)?;
            cfg.echo_to(&out)?;
            let c = &manifest.counts;
            println!(
                "scanned {} kept {} dropped_non_rgb {} dropped_unreadable {}",
                c.scanned, c.kept, c.dropped_non_rgb, c.dropped_unreadable
            );
            Ok(())
        }
        Command::Train { config, set, out } => {
            let base = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let cfg = base.with_cli_overrides(&set)?;
            let out = output_dir(out, &cfg)?;
            let state = TrainState::new(&cfg.train)?;
            let state = run_training(&cfg, state, &out)?;
            println!("trained to iteration {}; checkpoint in {}", state.iteration, out.display());
            Ok(())
        }
        Command::Resume {
            checkpoint,
            data_dir,
            total_iterations,
            out,
        } => {
            let (state, train_cfg) = resume::<f64>(&checkpoint)?;
            let mut cfg = RunConfig {
                train: train_cfg,
                ..Default::default()
            };
            if let Some(d) = data_dir {
                cfg.train.data_dir = Some(d);
            }
            if let Some(t) = total_iterations {
                cfg.train.total_iterations = t;
            }
            cfg.validate()?;
            let out = match out {
                Some(o) => o,
                None => checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            log::info!("resuming at iteration {}", state.iteration);
            let state = run_training(&cfg, state, &out)?;
            println!("trained to iteration {}", state.iteration);
            Ok(())
        }
        Command::Generate {
            checkpoint,
            count,
            seed,
            out,
            grid,
        } => {
            if count == 0 {
                return Err(Error::Config("--count must be at least 1".into()));
            }
            let (state, train_cfg) = resume::<f64>(&checkpoint)?;
            create_dir(&out)?;
            let images = generate(&state.generator, seed, count)?;
            write_samples(&images, &out)?;
            if grid {
                write_png(&image_grid(&images, GRID_COLUMNS)?, &out.join("grid.png"))?;
            }
            let mut cfg = RunConfig {
                train: train_cfg,
                ..Default::default()
            };
            cfg.run.sample_seed = seed;
            cfg.echo_to(&out)?;
            println!("wrote {count} samples to {}", out.display());
            Ok(())
        }
        Command::Evaluate {
            real,
            gen,
            extractor,
            kid_block,
            kid_blocks,
            seed,
            resolution,
            out,
        } => {
            let extractor = if extractor == "file" {
                None
            } else {
                Some(extractor.parse::<Extractor>()?)
            };
            let kid_cfg = KidConfig {
                block_size: kid_block,
                num_blocks: kid_blocks,
                ..Default::default()
            };
            if kid_blocks == 0 || kid_block == Some(0) {
                return Err(Error::Config("--kid-block and --kid-blocks must be positive".into()));
            }
            let real = features_from(&real, extractor, resolution)?;
            let gen = features_from(&gen, extractor, resolution)?;
            let report = evaluate(&real, &gen, &kid_cfg, seed)?;
            ensure_parent(&out)?;
            report.write(&out)?;
            println!("FID {:.4} KID {:.5} ± {:.5}", report.fid, report.kid_mean, report.kid_std);
            Ok(())
        }
        Command::Survey {
            responses,
            out,
            allow_partial,
        } => {
            let report = survey_report(&responses, allow_partial)?;
            ensure_parent(&out)?;
            report.write(&out)?;
            print!("{}", report.to_csv());
            Ok(())
        }
        Command::Pipeline { config, set, out } => {
            let cfg = RunConfig::load(&config)?.with_cli_overrides(&set)?;
            let out = output_dir(out, &cfg)?;
            let report = pipeline(&cfg, &out)?;
            println!(
                "FID {:.4} KID {:.5}; results in {}",
                report.fid,
                report.kid_mean,
                out.display()
            );
            Ok(())
        }
        Command::Version => {
            println!("artgan {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn ensure_parent(file: &Path) -> Result<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut body = text.to_string();
    if !body.ends_with('\n') {
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn output_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.run.out_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set out_dir".into()))
}

/// Scans and filters `dir`; fails if no RGB image survives.
pub fn preprocess(dir: &Path, resolution: usize) -> Result<DatasetManifest> {
    let manifest = filter_rgb(scan_directory(dir)?).with_resolution(resolution)?;
    if manifest.records.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no RGB images left in {} after filtering",
            dir.display()
        )));
    }
    Ok(manifest)
}

fn training_images(cfg: &RunConfig) -> Result<(DatasetManifest, Vec<Tensor<f64>>)> {
    let dir = cfg
        .train
        .data_dir
        .as_deref()
        .ok_or_else(|| Error::Config("data_dir is not set".into()))?;
    let manifest = preprocess(dir, cfg.train.resolution)?;
    let images = load_images(&manifest)?;
    Ok((manifest, images))
}

#[derive(Serialize)]
struct TrainHistory<'a> {
    iteration: u64,
    stopped_early: bool,
    failed_checkpoints: &'a [u64],
    loss_history: &'a [LossRecord],
    fid_history: &'a [FidPoint],
}

/// Trains `state` to `total_iterations` (or an early stop) with checkpoints
/// and history in `out`.
pub fn run_training(cfg: &RunConfig, state: TrainState<f64>, out: &Path) -> Result<TrainState<f64>> {
    let (_, images) = training_images(cfg)?;
    let real = extract_features(&images, cfg.train.extractor()?)?;
    train_on(cfg, state, out, images, &real)
}

fn train_on(
    cfg: &RunConfig,
    mut state: TrainState<f64>,
    out: &Path,
    images: Vec<Tensor<f64>>,
    real: &FeatureSet<f64>,
) -> Result<TrainState<f64>> {
    create_dir(out)?;
    cfg.echo_to(out)?;
    let sampler = BatchSampler::new(images, cfg.train.batch_size, cfg.train.data_seed(), cfg.train.augment_flip)?;
    let hooks = TrainHooks {
        checkpoint_dir: Some(out),
        real_features: Some(real),
    };
    let outcome = train(&mut state, &sampler, &cfg.train, cfg.train.total_iterations, &hooks)?;
    save_checkpoint(&state, &cfg.train, &checkpoint_path(out))?;
    let history = TrainHistory {
        iteration: state.iteration,
        stopped_early: outcome.stopped_early,
        failed_checkpoints: &outcome.failed_checkpoints,
        loss_history: &state.loss_history,
        fid_history: &state.fid_history,
    };
    let json = serde_json::to_string_pretty(&history).map_err(|e| Error::Format(e.to_string()))?;
    write_text(&out.join("history.json"), &json)?;
    if outcome.stopped_early {
        log::info!("stopped early at iteration {}", state.iteration);
    }
    Ok(state)
}

/// The first `count` samples for `seed`.
pub fn generate(generator: &Generator<f64>, seed: u64, count: usize) -> Result<Vec<Tensor<f64>>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| sample_image(generator, seed, i))
        .collect()
}

fn write_samples(images: &[Tensor<f64>], dir: &Path) -> Result<()> {
    images
        .par_iter()
        .enumerate()
        .try_for_each(|(i, img)| write_png(img, &dir.join(format!("sample_{i:04}.png"))))
}

fn features_from(path: &Path, extractor: Option<Extractor>, resolution: usize) -> Result<FeatureSet<f64>> {
    if is_feature_file(path) {
        let f = load_features::<f64>(path)?;
        if let Some(e) = extractor {
            if f.extractor_id != e.to_string() {
                return Err(Error::Config(format!(
                    "{} holds {} features but --extractor is {e}",
                    path.display(),
                    f.extractor_id
                )));
            }
        }
        return Ok(f);
    }
    let Some(extractor) = extractor else {
        return Err(Error::Config(format!(
            "--extractor file needs feature files, {} is not one",
            path.display()
        )));
    };
    if !path.is_dir() {
        return Err(Error::Config(format!(
            "{} is neither a feature file nor an image directory",
            path.display()
        )));
    }
    let images = load_images::<f64>(&preprocess(path, resolution)?)?;
    extract_features(&images, extractor)
}

/// Full run: preprocess, train, sample, score. Everything lands in `out`.
pub fn pipeline(cfg: &RunConfig, out: &Path) -> Result<MetricReport> {
    let (manifest, images) = training_images(cfg)?;
    create_dir(out)?;
    write_text(&out.join("manifest.json"), &manifest.to_json()?)?;
    let extractor = cfg.train.extractor()?;
    let real = extract_features(&images, extractor)?;

    let state = TrainState::new(&cfg.train)?;
    let state = train_on(cfg, state, out, images, &real)?;

    let count = cfg.run.eval_samples.max(cfg.run.grid_images);
    let samples = generate(&state.generator, cfg.run.sample_seed, count)?;
    let gen = extract_features(&samples[..cfg.run.eval_samples], extractor)?;
    let report = evaluate(&real, &gen, &cfg.kid(), cfg.train.seed)?;
    report.write(&out.join("report.json"))?;

    if cfg.run.grid_images > 0 {
        let shown = &samples[..cfg.run.grid_images];
        let dir = out.join("samples");
        create_dir(&dir)?;
        write_samples(shown, &dir)?;
        write_png(&image_grid(shown, GRID_COLUMNS)?, &out.join("grid.png"))?;
    }
    if let Some(responses) = &cfg.run.survey_responses {
        survey_report(responses, cfg.run.allow_partial)?.write(&out.join("survey.json"))?;
    }
    Ok(report)
}
