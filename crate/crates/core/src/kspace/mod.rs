//! JPEG k-space: blockwise DCT coefficients, quality-scaled quantization, the
//! baseline decoder, and file I/O for grayscale images and coefficient grids.
//!
//! A [`KSpaceImage`] keeps its quantized coefficients "in place": coefficient
//! `(i, j)` of block `(bx, by)` sits at pixel `(8 * by + i, 8 * bx + j)`, so the
//! code has the same extents as the image it came from.

pub mod dct;
mod io;
mod quant;

pub use io::{read_image, read_kspace, write_image, write_kspace, KSPACE_MAGIC};
pub use quant::{QuantTable, ANNEX_K_LUMINANCE};

use crate::error::{Error, Result};
use dct::{dct8x8, idct8x8, Block};

pub const BLOCK: usize = 8;

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn is_block_aligned(&self) -> bool {
        self.width % BLOCK == 0 && self.height % BLOCK == 0
    }

    /// Edge-replicates to the next multiple of 8 in each extent.
    pub fn pad_to_blocks(&self) -> GrayImage {
        let w = self.width.div_ceil(BLOCK) * BLOCK;
        let h = self.height.div_ceil(BLOCK) * BLOCK;
        if w == self.width && h == self.height {
            return self.clone();
        }
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = y.min(self.height - 1);
            for x in 0..w {
                pixels.push(self.get(x.min(self.width - 1), sy));
            }
        }
        GrayImage {
            width: w,
            height: h,
            pixels,
        }
    }

    /// The `width x height` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<GrayImage> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            pixels
                .extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + width]);
        }
        GrayImage::new(width, height, pixels)
    }

    /// Pixel intensities as a `[1, H, W]` tensor.
    pub fn to_tensor(&self) -> crate::tensor::Tensor {
        crate::tensor::Tensor::new(
            &[1, self.height, self.width],
            self.pixels.iter().map(|&p| p as f64).collect(),
        )
        .expect("extents match pixel count")
    }

    /// Rounds half away from zero and clamps to [0, 255].
    pub fn from_values(width: usize, height: usize, values: &[f64]) -> Result<GrayImage> {
        GrayImage::new(width, height, values.iter().map(|&v| to_pixel(v)).collect())
    }
}

pub(crate) fn to_pixel(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round().clamp(0.0, 255.0) as u8
}

/// Quantized DCT coefficients laid out in place, plus the quality they were quantized at.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KSpaceImage {
    width: usize,
    height: usize,
    quality: u32,
    coeffs: Vec<i16>,
}

impl KSpaceImage {
    pub fn new(width: usize, height: usize, quality: u32, coeffs: Vec<i16>) -> Result<Self> {
        if width == 0 || height == 0 || width % BLOCK != 0 || height % BLOCK != 0 {
            return Err(Error::InvalidArgument(format!(
                "k-space extents {width}x{height} must be positive multiples of 8"
            )));
        }
        QuantTable::check_quality(quality)?;
        if coeffs.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} k-space needs {} coefficients, got {}",
                width * height,
                coeffs.len()
            )));
        }
        Ok(KSpaceImage {
            width,
            height,
            quality,
            coeffs,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn quality(&self) -> u32 {
        self.quality
    }

    pub fn coeffs(&self) -> &[i16] {
        &self.coeffs
    }

    /// Coefficient `(i, j)` of block `(bx, by)`.
    pub fn coeff(&self, bx: usize, by: usize, i: usize, j: usize) -> i16 {
        self.coeffs[(BLOCK * by + i) * self.width + BLOCK * bx + j]
    }

    /// The raw coefficients as a `[1, H, W]` tensor: the network's input.
    pub fn to_tensor(&self) -> crate::tensor::Tensor {
        crate::tensor::Tensor::new(
            &[1, self.height, self.width],
            self.coeffs.iter().map(|&c| c as f64).collect(),
        )
        .expect("extents match coefficient count")
    }
}

fn read_block(values: &[f64], width: usize, bx: usize, by: usize) -> Block {
    let mut b = [[0.0; 8]; 8];
    for (i, row) in b.iter_mut().enumerate() {
        let start = (BLOCK * by + i) * width + BLOCK * bx;
        row.copy_from_slice(&values[start..start + BLOCK]);
    }
    b
}

fn write_block(values: &mut [f64], width: usize, bx: usize, by: usize, b: &Block) {
    for (i, row) in b.iter().enumerate() {
        let start = (BLOCK * by + i) * width + BLOCK * bx;
        values[start..start + BLOCK].copy_from_slice(row);
    }
}

/// Level shift, blockwise DCT, division by the quality's table, rounding half away from zero.
pub fn encode(image: &GrayImage, quality: u32) -> Result<KSpaceImage> {
    if !image.is_block_aligned() {
        return Err(Error::InvalidArgument(format!(
            "image extents {}x{} are not multiples of 8; pad first",
            image.width(),
            image.height()
        )));
    }
    let table = QuantTable::for_quality(quality)?;
    let (w, h) = (image.width(), image.height());
    let shifted: Vec<f64> = image.pixels().iter().map(|&p| p as f64 - 128.0).collect();
    let mut coeffs = vec![0i16; w * h];
    for by in 0..h / BLOCK {
        for bx in 0..w / BLOCK {
            let f = dct8x8(&read_block(&shifted, w, bx, by));
            for i in 0..BLOCK {
                for j in 0..BLOCK {
                    let q = (f[i][j] / table.get(i, j) as f64).round();
                    assert!(
                        q >= i16::MIN as f64 && q <= i16::MAX as f64,
                        "quantized coefficient {q} exceeds 16 bits"
                    );
                    coeffs[(BLOCK * by + i) * w + BLOCK * bx + j] = q as i16;
                }
            }
        }
    }
    KSpaceImage::new(w, h, quality, coeffs)
}

/// Dequantized, inverse-transformed and level-shifted pixel values, before rounding.
pub fn dequantize_to_pixels(code: &KSpaceImage) -> Vec<f64> {
    let table = QuantTable::for_quality(code.quality()).expect("quality validated at construction");
    let (w, h) = (code.width(), code.height());
    let deq: Vec<f64> = code
        .coeffs()
        .iter()
        .enumerate()
        .map(|(idx, &c)| {
            let (y, x) = (idx / w, idx % w);
            c as f64 * table.get(y % BLOCK, x % BLOCK) as f64
        })
        .collect();
    let mut out = vec![0.0; w * h];
    for by in 0..h / BLOCK {
        for bx in 0..w / BLOCK {
            let mut b = idct8x8(&read_block(&deq, w, bx, by));
            for v in b.iter_mut().flatten() {
                *v += 128.0;
            }
            write_block(&mut out, w, bx, by, &b);
        }
    }
    out
}

/// The standard decoder: dequantize, inverse DCT, level shift, round and clamp.
pub fn decode_baseline(code: &KSpaceImage) -> GrayImage {
    GrayImage::from_values(code.width(), code.height(), &dequantize_to_pixels(code))
        .expect("extents match")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_replicates_edges() {
        let img = GrayImage::new(3, 2, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let p = img.pad_to_blocks();
        assert_eq!((p.width(), p.height()), (8, 8));
        assert_eq!(p.get(7, 0), 3);
        assert_eq!(p.get(0, 7), 4);
        assert_eq!(p.get(7, 7), 6);
        assert_eq!(p.crop(0, 0, 3, 2).unwrap(), img);
    }

    #[test]
    fn encode_rejects_unaligned() {
        assert!(encode(&GrayImage::filled(12, 8, 0), 50).is_err());
    }

    #[test]
    fn mid_gray_encodes_to_zero() {
        for q in [10, 30, 50, 95] {
            let code = encode(&GrayImage::filled(16, 24, 128), q).unwrap();
            assert!(code.coeffs().iter().all(|&c| c == 0));
        }
    }

    #[test]
    fn zero_code_decodes_to_mid_gray() {
        let code = KSpaceImage::new(16, 8, 10, vec![0; 128]).unwrap();
        assert!(decode_baseline(&code).pixels().iter().all(|&p| p == 128));
    }

    #[test]
    fn constant_block_dc() {
        let table = QuantTable::for_quality(50).unwrap();
        let code = encode(&GrayImage::filled(8, 8, 136), 50).unwrap();
        let dc = (64.0 / table.get(0, 0) as f64).round() as i16;
        assert_eq!(code.coeff(0, 0, 0, 0), dc);
        assert_eq!(dc, 4);
        assert!(code.coeffs()[1..].iter().all(|&c| c == 0));
    }

    #[test]
    fn dc_only_code_decodes_to_constant() {
        for (k, q) in [(3i16, 50u32), (-5, 10), (40, 30), (-100, 10)] {
            let mut coeffs = vec![0i16; 64];
            coeffs[0] = k;
            let code = KSpaceImage::new(8, 8, q, coeffs).unwrap();
            let q00 = QuantTable::for_quality(q).unwrap().get(0, 0) as f64;
            let want = (128.0 + k as f64 * q00 / 8.0).round().clamp(0.0, 255.0) as u8;
            assert!(
                decode_baseline(&code).pixels().iter().all(|&p| p == want),
                "k={k} q={q}"
            );
        }
    }
}
