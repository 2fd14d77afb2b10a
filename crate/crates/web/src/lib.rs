//! Browser bindings: encode a picture at a chosen quality, look at its coded
//! channels, and compare baseline decoding against a network checkpoint.

use wasm_bindgen::prelude::*;

use hrcnn::kspace::{decode_baseline, encode, GrayImage, KSpaceImage};
use hrcnn::metrics::psnr;
use hrcnn::model::{channel_extract, checkpoint_from_bytes, init_params, reconstruct, InitScheme, ModelParams};

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn rgba(img: &GrayImage) -> Vec<u8> {
    img.pixels().iter().flat_map(|&p| [p, p, p, 255]).collect()
}

/// Finite PSNR, or `f64::INFINITY` for identical images (JS shows it as `Infinity`).
fn score(a: &GrayImage, b: &GrayImage) -> f64 {
    psnr(a, b).unwrap_or(f64::NAN)
}

#[wasm_bindgen]
pub struct Session {
    original: GrayImage,
    code: KSpaceImage,
    model: Option<ModelParams>,
    model_psnr: f64,
}

#[wasm_bindgen]
impl Session {
    /// Takes canvas RGBA pixels, keeps the green channel and crops to whole 8x8 blocks.
    #[wasm_bindgen(constructor)]
    pub fn new(rgba: &[u8], width: usize, height: usize, quality: u32) -> Result<Session, JsError> {
        if rgba.len() != width * height * 4 {
            return Err(js(format!("expected {} RGBA bytes, got {}", width * height * 4, rgba.len())));
        }
        let green = rgba.chunks_exact(4).map(|p| p[1]).collect();
        let full = GrayImage::new(width, height, green).map_err(js)?;
        let (w, h) = (width / 8 * 8, height / 8 * 8);
        if w == 0 || h == 0 {
            return Err(js("image must be at least 8x8"));
        }
        let original = full.crop(0, 0, w, h).map_err(js)?;
        let code = encode(&original, quality).map_err(js)?;
        Ok(Session { original, code, model: None, model_psnr: f64::NAN })
    }

    pub fn width(&self) -> usize {
        self.original.width()
    }

    pub fn height(&self) -> usize {
        self.original.height()
    }

    pub fn quality(&self) -> u32 {
        self.code.quality()
    }

    pub fn set_quality(&mut self, quality: u32) -> Result<(), JsError> {
        self.code = encode(&self.original, quality).map_err(js)?;
        Ok(())
    }

    pub fn original(&self) -> Vec<u8> {
        rgba(&self.original)
    }

    pub fn baseline(&self) -> Vec<u8> {
        rgba(&decode_baseline(&self.code))
    }

    pub fn baseline_psnr(&self) -> f64 {
        score(&self.original, &decode_baseline(&self.code))
    }

    /// Share of quantized coefficients that are zero.
    pub fn zero_fraction(&self) -> f64 {
        let c = self.code.coeffs();
        c.iter().filter(|&&v| v == 0).count() as f64 / c.len() as f64
    }

    /// One of the 64 coded-mask channels (a single DCT frequency across all
    /// blocks), min-max stretched, as RGBA of size (width/8) x (height/8).
    pub fn channel(&self, index: usize) -> Result<Vec<u8>, JsError> {
        if index >= 64 {
            return Err(js("channel index must be below 64"));
        }
        let t = channel_extract(&self.code.to_tensor()).map_err(js)?;
        let plane = t.channel(index);
        let (lo, hi) = plane.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        Ok(plane
            .iter()
            .flat_map(|&v| {
                let p = ((v - lo) / span * 255.0).round() as u8;
                [p, p, p, 255]
            })
            .collect())
    }

    /// Loads an HRC1 checkpoint.
    pub fn load_model(&mut self, bytes: &[u8]) -> Result<(), JsError> {
        self.model = Some(checkpoint_from_bytes(bytes, "checkpoint".as_ref()).map_err(js)?);
        Ok(())
    }

    /// Untrained network seeded to reproduce the baseline decoder.
    pub fn seed_model(&mut self, seed: u64) -> Result<(), JsError> {
        self.model = Some(init_params(InitScheme::IdctSeeded, self.code.quality(), seed).map_err(js)?);
        Ok(())
    }

    pub fn has_model(&self) -> bool {
        self.model.is_some()
    }

    /// Network reconstruction as RGBA; its PSNR is kept for `model_psnr`.
    pub fn reconstruct(&mut self) -> Result<Vec<u8>, JsError> {
        let p = self.model.as_ref().ok_or_else(|| js("no model loaded"))?;
        let img = reconstruct(&self.code, p).map_err(js)?;
        self.model_psnr = score(&self.original, &img);
        Ok(rgba(&img))
    }

    /// PSNR of the last reconstruction (NaN before the first).
    pub fn model_psnr(&self) -> f64 {
        self.model_psnr
    }
}
