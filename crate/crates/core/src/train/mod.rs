//! Dataset generation and mini-batch SGD on the summed squared pixel error.

mod config;
mod dataset;

pub use config::TrainConfig;
pub use dataset::{
    audit_manifest, evaluate_manifest, make_dataset, AuditReport, DatasetOptions, DatasetSummary,
    Manifest, ManifestEntry, SamplePair, SourceRecord, Split,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kspace::decode_baseline;
use crate::metrics::psnr;
use crate::model::{
    backward, balance_channels, forward_train, init_params, load_checkpoint, reconstruct,
    save_checkpoint, ModelParams, ParamGrads, DEFAULT_BALANCE,
};
use crate::tensor::Tensor;

/// Squared-error loss `||F(Y) - X||^2` of one pair and its parameter gradient.
pub fn sample_gradient(params: &ModelParams, pair: &SamplePair) -> Result<(f64, ParamGrads)> {
    let cache = forward_train(&pair.code.to_tensor(), params)?;
    let out = cache.output();
    let target = pair.ground_truth.to_tensor();
    if out.shape() != target.shape() {
        return Err(Error::shape(
            "sample_gradient",
            format!(
                "output {:?} vs ground truth {:?}",
                out.shape(),
                target.shape()
            ),
        ));
    }
    let diff: Vec<f64> = out
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| p - t)
        .collect();
    let loss = diff.iter().map(|d| d * d).sum();
    let grad = Tensor::new(out.shape(), diff.iter().map(|d| 2.0 * d).collect())?;
    Ok((loss, backward(params, &cache, &grad, false)?.params))
}

/// Mean loss of a batch under `params` without updating anything.
pub fn batch_loss(params: &ModelParams, batch: &[SamplePair]) -> Result<f64> {
    let mut total = 0.0;
    for pair in batch {
        let (out, _) = crate::model::forward(&pair.code.to_tensor(), params, false)?;
        let target = pair.ground_truth.to_tensor();
        total += out
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

#[derive(Clone, Copy, Debug)]
pub struct StepOptions {
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Mean per-sample loss before the update.
    pub loss: f64,
    /// Global norm of the mean gradient before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// One SGD update with the mean of the per-sample gradients. Per-sample work may
/// run on `pool`; the reduction is always sequential in batch order, so results
/// do not depend on the worker count.
pub fn sgd_step(
    params: &mut ModelParams,
    batch: &[SamplePair],
    opts: StepOptions,
    pool: Option<&rayon::ThreadPool>,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let per_sample: Vec<Result<(f64, ParamGrads)>> = match pool {
        Some(pool) => pool.install(|| {
            batch
                .par_iter()
                .map(|p| sample_gradient(params, p))
                .collect()
        }),
        None => batch.iter().map(|p| sample_gradient(params, p)).collect(),
    };
    let mut grads = ParamGrads::zeros();
    let mut loss = 0.0;
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        grads.add_assign(&g);
    }
    let n = batch.len() as f64;
    loss /= n;
    grads.scale(1.0 / n);

    let grad_norm = grads.norm();
    if !loss.is_finite() || !grad_norm.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            detail: format!("loss {loss}, gradient norm {grad_norm}"),
        });
    }
    let mut scale = 1.0;
    let mut clipped = false;
    if let Some(c) = opts.clip_norm {
        if grad_norm > c {
            scale = c / grad_norm;
            clipped = true;
        }
    }
    params.apply(-opts.learning_rate * scale, &grads);
    if !params.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            detail: "non-finite parameters after update".into(),
        });
    }
    Ok(StepStats {
        loss,
        grad_norm,
        clipped,
    })
}

/// Mean PSNR of model reconstructions (or of the baseline decoder) over `pairs`.
pub fn mean_psnr(pairs: &[SamplePair], params: Option<&ModelParams>) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        let recon = match params {
            Some(m) => reconstruct(&p.code, m)?,
            None => decode_baseline(&p.code),
        };
        total += psnr(&p.ground_truth, &recon)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Sample order for `epoch`: a fixed permutation stream per (seed, epoch), so a
/// resumed run shuffles exactly like an uninterrupted one.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_psnr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Epochs run by this invocation (resumed runs skip the finished ones).
    pub epochs: Vec<EpochStats>,
    /// Baseline decoder PSNR on the validation split, if it is non-empty.
    pub baseline_val_psnr: Option<f64>,
    pub final_checkpoint: PathBuf,
    pub loss_log: PathBuf,
}

pub const LOSS_LOG: &str = "loss.csv";
const LOSS_HEADER: &str = "step,epoch,train_loss,grad_norm,val_psnr";

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(format!("epoch_{epoch:04}.hrc"))
}

fn state_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("state")
}

fn write_state(checkpoint: &Path, epoch: usize, step: usize) -> Result<()> {
    let p = state_path(checkpoint);
    std::fs::write(&p, format!("epoch = {epoch}\nstep = {step}\n")).map_err(|e| Error::io(&p, e))
}

fn read_state(checkpoint: &Path) -> Result<(usize, usize)> {
    let p = state_path(checkpoint);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let (mut epoch, mut step) = (None, None);
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            match k.trim() {
                "epoch" => epoch = v.trim().parse().ok(),
                "step" => step = v.trim().parse().ok(),
                _ => {}
            }
        }
    }
    match (epoch, step) {
        (Some(e), Some(s)) => Ok((e, s)),
        _ => Err(Error::format(&p, "expected `epoch = N` and `step = N`")),
    }
}

/// Rows of an existing loss log up to and including `through_epoch`.
fn retained_log(path: &Path, through_epoch: usize) -> Result<String> {
    let mut s = format!("{LOSS_HEADER}\n");
    let Ok(text) = std::fs::read_to_string(path) else {
        return Ok(s);
    };
    for line in text.lines().skip(1) {
        let epoch: Option<usize> = line.split(',').nth(1).and_then(|e| e.parse().ok());
        match epoch {
            Some(e) if e <= through_epoch => {
                s.push_str(line);
                s.push('\n');
            }
            Some(_) => {}
            None => return Err(Error::format(path, format!("malformed row {line:?}"))),
        }
    }
    Ok(s)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs the configured number of epochs and leaves `loss.csv`, per-epoch
/// checkpoints (with resume state) and `final.hrc` in the output directory.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = Manifest::load(&cfg.manifest)?;
    if let Some(q) = cfg.quality {
        if q != manifest.quality {
            return Err(Error::InvalidArgument(format!(
                "config quality {q} but the manifest was made at {}",
                manifest.quality
            )));
        }
    }
    if let Some(c) = cfg.crop_size {
        if c != manifest.crop {
            return Err(Error::InvalidArgument(format!(
                "config crop_size {c} but the manifest was made at {}",
                manifest.crop
            )));
        }
    }
    let train_set = manifest.load_split(Split::Train)?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: no training pairs",
            cfg.manifest.display()
        )));
    }
    let val_set = manifest.load_split(Split::Val)?;

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let loss_log = cfg.out_dir.join(LOSS_LOG);

    let (mut params, start_epoch, mut step) = match &cfg.resume {
        Some(ckpt) => {
            let params = load_checkpoint(ckpt)?;
            let (epoch, step) = read_state(ckpt)?;
            (params, epoch, step)
        }
        None => {
            let mut params = init_params(cfg.init, manifest.quality, cfg.seed)?;
            if cfg.balance_pairs > 0 {
                let inputs: Vec<Tensor> = train_set
                    .iter()
                    .take(cfg.balance_pairs)
                    .map(|p| p.code.to_tensor())
                    .collect();
                balance_channels(&mut params, &inputs, DEFAULT_BALANCE)?;
            }
            (params, 0, 0)
        }
    };
    if params.quality() != manifest.quality {
        return Err(Error::InvalidArgument(format!(
            "checkpoint quality {} but the manifest was made at {}",
            params.quality(),
            manifest.quality
        )));
    }
    let mut log = retained_log(&loss_log, start_epoch)?;
    if cfg.resume.is_none() {
        log = format!("{LOSS_HEADER}\n");
    }
    write_file(&loss_log, &log)?;

    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let baseline_val_psnr = if val_set.is_empty() {
        None
    } else {
        Some(mean_psnr(&val_set, None)?)
    };
    if let Some(b) = baseline_val_psnr {
        log::info!(
            "baseline validation PSNR {b:.4} dB over {} pairs",
            val_set.len()
        );
    }

    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let warmup_steps = (cfg.warmup_epochs * steps_per_epoch as f64).round() as usize;
    let mut epochs = Vec::new();
    for epoch in start_epoch + 1..=cfg.epochs {
        let order = epoch_order(train_set.len(), cfg.seed, epoch);
        let mut rows = Vec::with_capacity(steps_per_epoch);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<SamplePair> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let warm = if warmup_steps == 0 {
                1.0
            } else {
                (step as f64 / warmup_steps as f64).min(1.0)
            };
            let opts = StepOptions {
                learning_rate: cfg.learning_rate * warm,
                clip_norm: cfg.clip_norm,
            };
            let stats =
                sgd_step(&mut params, &batch, opts, pool.as_ref()).map_err(|e| match e {
                    Error::Divergence { detail, .. } => Error::Divergence { step, detail },
                    other => other,
                })?;
            epoch_loss += stats.loss * batch.len() as f64;
            rows.push((step, stats.loss, stats.grad_norm));
            log::debug!(
                "step {step} epoch {epoch} loss {:.6e} grad_norm {:.3e}{}",
                stats.loss,
                stats.grad_norm,
                if stats.clipped { " (clipped)" } else { "" }
            );
        }
        let mean_loss = epoch_loss / train_set.len() as f64;
        let val_psnr = if cfg.val_every > 0 && epoch % cfg.val_every == 0 && !val_set.is_empty() {
            Some(mean_psnr(&val_set, Some(&params))?)
        } else {
            None
        };
        for (i, (s, l, g)) in rows.iter().enumerate() {
            let v = match val_psnr {
                Some(v) if i + 1 == rows.len() => v.to_string(),
                _ => String::new(),
            };
            let _ = writeln!(log, "{s},{epoch},{l},{g},{v}");
        }
        write_file(&loss_log, &log)?;
        log::info!(
            "epoch {epoch}: mean loss {mean_loss:.6e}{}",
            val_psnr
                .map(|v| format!(", validation PSNR {v:.4} dB"))
                .unwrap_or_default()
        );
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            let ckpt = checkpoint_path(&cfg.out_dir, epoch);
            save_checkpoint(&params, &ckpt)?;
            write_state(&ckpt, epoch, step)?;
        }
        epochs.push(EpochStats {
            epoch,
            mean_loss,
            val_psnr,
        });
    }

    let final_checkpoint = cfg.out_dir.join("final.hrc");
    save_checkpoint(&params, &final_checkpoint)?;
    Ok(TrainOutcome {
        params,
        epochs,
        baseline_val_psnr,
        final_checkpoint,
        loss_log,
    })
}
