use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hrcnn::kspace::{decode_baseline, encode, read_image, read_kspace, write_image, write_kspace, GrayImage};
use hrcnn::metrics::Reconstructor;
use hrcnn::model::gradcheck::{run_gradcheck, GradcheckConfig};
use hrcnn::model::{
    forward, init_params, load_checkpoint, param_count, save_checkpoint, write_tap, InitScheme,
};
use hrcnn::tensor::Tensor;
use hrcnn::train::{audit_manifest, evaluate_manifest, make_dataset, train, DatasetOptions, Manifest, Split, TrainConfig};

#[derive(Parser)]
#[command(name = "hrcnn", version, about = "Reconstruct images from quantized JPEG DCT coefficients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize an image's 8x8 DCT coefficients into a .ksp file.
    Encode {
        image: PathBuf,
        out: PathBuf,
        #[arg(short, long, value_parser = clap::value_parser!(u32).range(1..=100))]
        quality: u32,
    },
    /// Reconstruct an image from a .ksp file.
    Decode(DecodeArgs),
    /// Cut seeded random crops from a directory of images into training pairs.
    MakeDataset {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(short, long, value_parser = clap::value_parser!(u32).range(1..=100), default_value_t = 10)]
        quality: u32,
        #[arg(long, default_value_t = 128)]
        crop: usize,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 40)]
        val_count: usize,
        #[arg(long, default_value_t = 0.25)]
        val_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; flags override the config file.
    Train(TrainArgs),
    /// Compare baseline decoding and a model on a dataset, writing a CSV report.
    Eval {
        manifest: PathBuf,
        /// Checkpoint to score; without it the baseline decoder is scored against itself.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Val)]
        split: SplitArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the whole network's gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Count trainable parameters of a checkpoint (or a fresh model).
    ParamCount { checkpoint: Option<PathBuf> },
    /// Dump every intermediate activation as TAP1 files plus PGM previews.
    Inspect {
        ksp: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-encode every pair of a dataset and report mismatches.
    Audit { manifest: PathBuf },
    /// Write a freshly initialised checkpoint.
    Init {
        out: PathBuf,
        #[arg(short, long, value_parser = clap::value_parser!(u32).range(1..=100), default_value_t = 10)]
        quality: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "idct_seeded")]
        init: InitScheme,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    All,
}

#[derive(Args)]
struct DecodeArgs {
    ksp: PathBuf,
    out: PathBuf,
    /// Standard dequantize + inverse DCT (the default).
    #[arg(long, conflicts_with = "model")]
    baseline: bool,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Any config key, as key=value; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Encode { image, out, quality } => {
            let mut img = read_image(&image)?;
            if !img.is_block_aligned() {
                log::warn!(
                    "{}x{} is not a multiple of 8; edges replicated to whole blocks",
                    img.width(),
                    img.height()
                );
                img = img.pad_to_blocks();
            }
            write_kspace(&encode(&img, quality)?, &out)?;
        }
        Command::Decode(args) => decode(args)?,
        Command::MakeDataset {
            source,
            out,
            quality,
            crop,
            count,
            val_count,
            val_fraction,
            seed,
        } => {
            let summary = make_dataset(&DatasetOptions {
                sources: source,
                out_dir: out,
                quality,
                crop,
                count,
                val_count,
                val_fraction,
                seed,
            })?;
            if !summary.skipped.is_empty() {
                log::warn!("skipped {} undersized images", summary.skipped.len());
            }
            println!("{}", summary.manifest_path.display());
        }
        Command::Train(args) => {
            let outcome = train(&train_config(args)?)?;
            for e in &outcome.epochs {
                println!(
                    "epoch {} mean_loss {:.6e}{}",
                    e.epoch,
                    e.mean_loss,
                    e.val_psnr.map(|v| format!(" val_psnr {v:.4}")).unwrap_or_default()
                );
            }
            if let (Some(b), Some(v)) = (
                outcome.baseline_val_psnr,
                outcome.epochs.last().and_then(|e| e.val_psnr),
            ) {
                println!("baseline_val_psnr {b:.4} ipsnr {:+.4}", v - b);
            }
            println!("{}", outcome.final_checkpoint.display());
        }
        Command::Eval { manifest, model, split, out } => {
            let split = match split {
                SplitArg::Train => Some(Split::Train),
                SplitArg::Val => Some(Split::Val),
                SplitArg::All => None,
            };
            let m = Manifest::load(&manifest)?;
            let params = model.as_ref().map(load_checkpoint).transpose()?;
            let (recon, id) = match (&params, &model) {
                (Some(p), Some(path)) => (Reconstructor::Model(p), path.display().to_string()),
                _ => (Reconstructor::Baseline, "baseline".to_owned()),
            };
            let report = evaluate_manifest(&m, split, &recon, &id);
            match out {
                Some(path) => {
                    std::fs::write(&path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?
                }
                None => print!("{}", report.to_csv()),
            }
            eprintln!("{}", report.summary());
            for (id, err) in &report.failures {
                eprintln!("failed {id}: {err}");
            }
            if !report.failures.is_empty() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Gradcheck { seed, csv } => {
            let report = run_gradcheck(&GradcheckConfig { seed, ..Default::default() })?;
            if let Some(path) = csv {
                std::fs::write(&path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            let failures = report.failures().count();
            println!(
                "gradcheck seed {seed}: {} coordinates, max rel error {:.3e}, median {:.3e}, {failures} above {:.0e} -> {}",
                report.samples.len(),
                report.max_rel_error(),
                report.median_rel_error(),
                report.tolerance,
                if report.passed() { "PASS" } else { "FAIL" }
            );
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::ParamCount { checkpoint } => {
            let params = match checkpoint {
                Some(path) => load_checkpoint(path)?,
                None => init_params(InitScheme::IdctSeeded, 10, 0)?,
            };
            let c = param_count(&params);
            println!("decoding {}", c.decoding);
            println!("enhancement {}", c.enhancement);
            println!("total {}", c.total);
        }
        Command::Inspect { ksp, model, out } => inspect(&ksp, &model, &out)?,
        Command::Audit { manifest } => {
            let report = audit_manifest(&Manifest::load(&manifest)?);
            for (path, why) in &report.problems {
                eprintln!("{}: {why}", path.display());
            }
            println!("checked {} pairs, {} problems", report.checked, report.problems.len());
            if !report.ok() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Init { out, quality, seed, init } => {
            save_checkpoint(&init_params(init, quality, seed)?, &out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn train_config(args: TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.manifest {
        cfg.manifest = v;
    }
    if let Some(v) = args.out {
        cfg.out_dir = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.threads {
        cfg.threads = v;
    }
    if let Some(v) = args.resume {
        cfg.resume = Some(v);
    }
    for kv in &args.overrides {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set {kv:?}: expected KEY=VALUE"))?;
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn decode(args: DecodeArgs) -> Result<()> {
    let code = read_kspace(&args.ksp)?;
    let t = Instant::now();
    let baseline = decode_baseline(&code);
    let baseline_s = t.elapsed().as_secs_f64();
    let (image, model_s) = match &args.model {
        Some(path) => {
            let params = load_checkpoint(path)?;
            if params.quality() != code.quality() {
                log::warn!(
                    "checkpoint trained at quality {} but {} was coded at {}; proceeding",
                    params.quality(),
                    args.ksp.display(),
                    code.quality()
                );
            }
            let t = Instant::now();
            let img = hrcnn::model::reconstruct(&code, &params)?;
            (img, Some(t.elapsed().as_secs_f64()))
        }
        None => (baseline, None),
    };
    write_image(&image, &args.out)?;
    match model_s {
        Some(m) => println!("TIMING baseline_s={baseline_s:.6} model_s={m:.6}"),
        None => println!("TIMING baseline_s={baseline_s:.6}"),
    }
    Ok(())
}

fn inspect(ksp: &Path, model: &Path, out: &Path) -> Result<()> {
    let code = read_kspace(ksp)?;
    let params = load_checkpoint(model)?;
    let (_, taps) = forward(&code.to_tensor(), &params, true)?;
    let taps = taps.context("forward pass returned no taps")?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (k, (name, tensor)) in taps.named().into_iter().enumerate() {
        let stem = format!("{}_{name}", k + 1);
        write_tap(code.quality(), tensor, out.join(format!("{stem}.tap")))?;
        write_image(&preview(tensor)?, out.join(format!("{stem}.pgm")))?;
        let s = tensor.shape();
        println!("{stem} {}x{}x{}", s[0], s[1], s[2]);
    }
    Ok(())
}

/// Channels tiled in a near-square grid, min-max stretched to 0..255 over the whole tap.
fn preview(t: &Tensor) -> Result<GrayImage> {
    let [c, h, w] = [t.shape()[0], t.shape()[1], t.shape()[2]];
    let cols = (c as f64).sqrt().ceil() as usize;
    let rows = c.div_ceil(cols);
    let (lo, hi) = t
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (pw, ph) = (cols * w, rows * h);
    let mut px = vec![0u8; pw * ph];
    for ch in 0..c {
        let (ox, oy) = ((ch % cols) * w, (ch / cols) * h);
        for (i, &v) in t.channel(ch).iter().enumerate() {
            px[(oy + i / w) * pw + ox + i % w] = ((v - lo) / span * 255.0).round() as u8;
        }
    }
    Ok(GrayImage::new(pw, ph, px)?)
}
