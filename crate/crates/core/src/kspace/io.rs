//! Image and k-space file formats.
//!
//! K-space files are `"KSP1" | width u32 | height u32 | quality u32 | coefficients`,
//! all little-endian, coefficients as row-major `i16`.

use std::fs;
use std::path::Path;

use super::{GrayImage, KSpaceImage};
use crate::error::{Error, Result};

pub const KSPACE_MAGIC: &[u8; 4] = b"KSP1";
const PNG_SIGNATURE: &[u8; 8] = b"\x89PNG\r\n\x1a\n";

/// Reads a binary PGM (P5, maxval 255) or an 8-bit PNG. Color PNGs contribute
/// their green channel.
pub fn read_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|detail| Error::format(path, detail))
}

pub(crate) fn decode_image(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else {
        Err("not a binary PGM (P5) or PNG file".into())
    }
}

/// Writes PNG when the extension is `.png`, binary PGM otherwise.
pub fn write_image(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png {
        encode_png(image).map_err(|d| Error::format(path, d))?
    } else {
        encode_pgm(image)
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.pixels());
    out
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comment lines between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("malformed PGM header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| "PGM header value out of range".to_string())?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(format!(
            "unsupported PGM maxval {maxval} (only 8-bit, maxval 255)"
        ));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed PGM header".into());
    }
    pos += 1;
    let payload = &bytes[pos..];
    let n = width
        .checked_mul(height)
        .ok_or_else(|| "PGM extents overflow".to_string())?;
    if payload.len() < n {
        return Err(format!("truncated PGM: {} of {n} pixels", payload.len()));
    }
    GrayImage::new(width, height, payload[..n].to_vec()).map_err(|e| e.to_string())
}

fn decode_png(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format!(
            "unsupported PNG bit depth {:?} (only 8-bit)",
            info.bit_depth
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let (channels, pick) = match info.color_type {
        png::ColorType::Grayscale => (1, 0),
        png::ColorType::GrayscaleAlpha => (2, 0),
        png::ColorType::Rgb => (3, 1),
        png::ColorType::Rgba => (4, 1),
        png::ColorType::Indexed => return Err("unexpanded palette PNG".into()),
    };
    let mut pixels = Vec::with_capacity(w * h);
    for row in buf[..info.buffer_size()].chunks_exact(info.line_size) {
        pixels.extend(
            row[..w * channels]
                .chunks_exact(channels)
                .map(|px| px[pick]),
        );
    }
    GrayImage::new(w, h, pixels).map_err(|e| e.to_string())
}

fn encode_png(image: &GrayImage) -> std::result::Result<Vec<u8>, String> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| e.to_string())?;
        writer
            .write_image_data(image.pixels())
            .map_err(|e| e.to_string())?;
    }
    Ok(out)
}

impl KSpaceImage {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 2 * self.coeffs.len());
        out.extend_from_slice(KSPACE_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&self.quality.to_le_bytes());
        for c in &self.coeffs {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 4 || &bytes[..4] != KSPACE_MAGIC {
            return Err("bad magic: not a KSP1 file".into());
        }
        if bytes.len() < 16 {
            return Err("truncated KSP1 header".into());
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (width, height, quality) = (word(4), word(8), word(12) as u32);
        if width % 8 != 0 || height % 8 != 0 || width == 0 || height == 0 {
            return Err(format!(
                "extents {width}x{height} are not positive multiples of 8"
            ));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(2))
            .and_then(|n| n.checked_add(16))
            .ok_or_else(|| "KSP1 extents overflow".to_string())?;
        if bytes.len() < expected {
            return Err(format!(
                "truncated KSP1 payload: {} of {expected} bytes",
                bytes.len()
            ));
        }
        if bytes.len() > expected {
            return Err(format!(
                "{} trailing bytes after KSP1 payload",
                bytes.len() - expected
            ));
        }
        let coeffs = bytes[16..]
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect();
        KSpaceImage::new(width, height, quality, coeffs).map_err(|e| e.to_string())
    }
}

pub fn read_kspace(path: impl AsRef<Path>) -> Result<KSpaceImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    KSpaceImage::from_bytes(&bytes).map_err(|d| Error::format(path, d))
}

pub fn write_kspace(code: &KSpaceImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, code.to_bytes()).map_err(|e| Error::io(path, e))
}
