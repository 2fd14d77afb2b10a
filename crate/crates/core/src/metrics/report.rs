use std::fmt::Write as _;

use super::{psnr, ssim};
use crate::error::Result;
use crate::kspace::{decode_baseline, GrayImage, KSpaceImage};
use crate::model::{reconstruct, ModelParams};

/// What produces the "model" column of a report.
#[derive(Clone, Copy, Debug)]
pub enum Reconstructor<'a> {
    /// The baseline decoder itself; every improvement is zero by construction.
    Baseline,
    Model(&'a ModelParams),
}

impl Reconstructor<'_> {
    pub fn reconstruct(&self, code: &KSpaceImage) -> Result<GrayImage> {
        match self {
            Reconstructor::Baseline => Ok(decode_baseline(code)),
            Reconstructor::Model(p) => reconstruct(code, p),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub psnr_jpeg: f64,
    pub psnr_model: f64,
    pub ssim_jpeg: f64,
    pub ssim_model: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub quality: u32,
    /// Free-form identifier of the model (usually the checkpoint path).
    pub model_id: String,
    pub rows: Vec<EvalRow>,
    /// `(id, reason)` for pairs that could not be evaluated.
    pub failures: Vec<(String, String)>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Difference of two means; equal infinities (every image reproduced exactly by
/// both columns) count as no improvement.
fn improvement(model: f64, jpeg: f64) -> f64 {
    if model == jpeg {
        0.0
    } else {
        model - jpeg
    }
}

impl EvalReport {
    pub fn mean_psnr_jpeg(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr_jpeg))
    }

    pub fn mean_psnr_model(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr_model))
    }

    pub fn mean_ssim_jpeg(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim_jpeg))
    }

    pub fn mean_ssim_model(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim_model))
    }

    /// Mean model PSNR minus mean baseline PSNR, in dB.
    pub fn ipsnr(&self) -> f64 {
        improvement(self.mean_psnr_model(), self.mean_psnr_jpeg())
    }

    /// Mean model SSIM minus mean baseline SSIM.
    pub fn issim(&self) -> f64 {
        improvement(self.mean_ssim_model(), self.mean_ssim_jpeg())
    }

    /// Header, one row per image, then `AGGREGATE:mean` and `AGGREGATE:improvement`
    /// rows (the latter holds IPSNR and ISSIM in the model columns).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,psnr_jpeg,psnr_model,ssim_jpeg,ssim_model\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.id, r.psnr_jpeg, r.psnr_model, r.ssim_jpeg, r.ssim_model
            );
        }
        let _ = writeln!(
            s,
            "AGGREGATE:mean,{:.6},{:.6},{:.6},{:.6}",
            self.mean_psnr_jpeg(),
            self.mean_psnr_model(),
            self.mean_ssim_jpeg(),
            self.mean_ssim_model()
        );
        let _ = writeln!(
            s,
            "AGGREGATE:improvement,,{:.6},,{:.6}",
            self.ipsnr(),
            self.issim()
        );
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "quality={} model={} images={} failures={}\n\
             psnr_jpeg={:.4} psnr_model={:.4} ipsnr={:.4}\n\
             ssim_jpeg={:.4} ssim_model={:.4} issim={:.4}\n",
            self.quality,
            self.model_id,
            self.rows.len(),
            self.failures.len(),
            self.mean_psnr_jpeg(),
            self.mean_psnr_model(),
            self.ipsnr(),
            self.mean_ssim_jpeg(),
            self.mean_ssim_model(),
            self.issim(),
        );
        for (id, why) in &self.failures {
            let _ = writeln!(s, "failed {id}: {why}");
        }
        s
    }
}

/// Scores one ground-truth/code pair with both the baseline decoder and `model`.
pub fn evaluate_pair(
    id: &str,
    truth: &GrayImage,
    code: &KSpaceImage,
    model: &Reconstructor<'_>,
) -> Result<EvalRow> {
    let jpeg = decode_baseline(code);
    let recon = model.reconstruct(code)?;
    Ok(EvalRow {
        id: id.to_owned(),
        psnr_jpeg: psnr(truth, &jpeg)?,
        psnr_model: psnr(truth, &recon)?,
        ssim_jpeg: ssim(truth, &jpeg)?,
        ssim_model: ssim(truth, &recon)?,
    })
}

/// Evaluates every `(id, truth, code)` item in order. Items that fail (mismatched
/// extents, images too small for SSIM) are recorded and skipped.
pub fn evaluate<'a, I>(
    items: I,
    model: &Reconstructor<'_>,
    quality: u32,
    model_id: &str,
) -> EvalReport
where
    I: IntoIterator<Item = (String, &'a GrayImage, &'a KSpaceImage)>,
{
    let mut report = EvalReport {
        quality,
        model_id: model_id.to_owned(),
        ..EvalReport::default()
    };
    for (id, truth, code) in items {
        match evaluate_pair(&id, truth, code, model) {
            Ok(row) => report.rows.push(row),
            Err(e) => report.failures.push((id, e.to_string())),
        }
    }
    report
}
