//! Binary checkpoints ("HRC1") and activation dumps ("TAP1").
//!
//! All integers are u32 LE and all payloads f64 LE, row-major.

use std::path::Path;

use super::arch::{layer, LayerKind, FIRST_TRAINABLE, LAYER_COUNT};
use super::params::{LayerParams, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HRC1";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const TAP_MAGIC: &[u8; 4] = b"TAP1";

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Little-endian reader that reports what it was reading when it runs dry.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        if self.bytes.len() - self.pos < n {
            return Err(format!("truncated while reading {what}"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("payload size overflow")?, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finished(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn checkpoint_to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * params.flat_len() + 1024);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, params.quality());
    put_u32(&mut out, (LAYER_COUNT - FIRST_TRAINABLE + 1) as u32);
    for (index, p) in params.iter() {
        let spec = layer(index);
        put_u32(&mut out, index as u32);
        put_u32(&mut out, spec.kind.code());
        for d in p.weight.shape() {
            put_u32(&mut out, *d as u32);
        }
        put_f64s(&mut out, p.weight.data());
        put_f64s(&mut out, &p.bias);
    }
    out
}

/// Parses a checkpoint, validating every layer against the architecture table.
/// Errors that concern one layer come back as [`Error::Layer`].
pub fn checkpoint_from_bytes(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let fmt = |detail: String| Error::format(path, detail);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").map_err(fmt)? != CHECKPOINT_MAGIC {
        return Err(fmt("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version").map_err(fmt)?;
    if version != CHECKPOINT_VERSION {
        return Err(fmt(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let quality = r.u32("quality").map_err(fmt)?;
    let count = r.u32("layer count").map_err(fmt)? as usize;
    let expected = LAYER_COUNT - FIRST_TRAINABLE + 1;
    if count != expected {
        return Err(fmt(format!("layer count {count}, expected {expected}")));
    }

    let mut layers = Vec::with_capacity(count);
    for slot in 0..count {
        let want = layer(slot + FIRST_TRAINABLE);
        let err = |detail: String| Error::Layer {
            layer: want.index,
            detail,
        };
        let index = r.u32("layer index").map_err(err)? as usize;
        if index != want.index {
            return Err(err(format!("found layer index {index} in its slot")));
        }
        let kind = r.u32("layer kind").map_err(err)?;
        if LayerKind::from_code(kind) != Some(want.kind) {
            return Err(err(format!(
                "kind code {kind}, expected {} ({:?})",
                want.kind.code(),
                want.kind
            )));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32("weight shape").map_err(err)? as usize;
        }
        if dims != want.weight_shape() {
            return Err(err(format!(
                "weight shape {dims:?}, expected {:?}",
                want.weight_shape()
            )));
        }
        let weight = r.f64s(dims.iter().product(), "weights").map_err(err)?;
        let bias = r.f64s(want.out_channels, "bias").map_err(err)?;
        layers.push(LayerParams {
            weight: Tensor::new(&dims, weight)?,
            bias,
        });
    }
    if !r.finished() {
        return Err(fmt("trailing bytes after the last layer".into()));
    }
    ModelParams::new(quality, layers)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, path)
}

/// One dumped activation: `[channels, height, width]` plus the quality of the
/// code it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct TapDump {
    pub quality: u32,
    pub tensor: Tensor,
}

/// `"TAP1" | width | height | quality | channels`, then the f64 payload.
pub fn tap_to_bytes(quality: u32, tensor: &Tensor) -> Result<Vec<u8>> {
    let [c, h, w] = *tensor.shape() else {
        return Err(Error::shape(
            "tap_to_bytes",
            format!("expected [C, H, W], got {:?}", tensor.shape()),
        ));
    };
    let mut out = Vec::with_capacity(20 + 8 * tensor.len());
    out.extend_from_slice(TAP_MAGIC);
    for v in [w, h, quality as usize, c] {
        put_u32(&mut out, v as u32);
    }
    put_f64s(&mut out, tensor.data());
    Ok(out)
}

pub fn tap_from_bytes(bytes: &[u8], path: &Path) -> Result<TapDump> {
    let fmt = |detail: String| Error::format(path, detail);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").map_err(fmt)? != TAP_MAGIC {
        return Err(fmt("not a tap dump (bad magic)".into()));
    }
    let w = r.u32("width").map_err(fmt)? as usize;
    let h = r.u32("height").map_err(fmt)? as usize;
    let quality = r.u32("quality").map_err(fmt)?;
    let c = r.u32("channels").map_err(fmt)? as usize;
    let data = r.f64s(c * h * w, "payload").map_err(fmt)?;
    if !r.finished() {
        return Err(fmt("trailing bytes after payload".into()));
    }
    Ok(TapDump {
        quality,
        tensor: Tensor::new(&[c, h, w], data)?,
    })
}

pub fn write_tap(quality: u32, tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, tap_to_bytes(quality, tensor)?).map_err(|e| Error::io(path, e))
}

pub fn read_tap(path: impl AsRef<Path>) -> Result<TapDump> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    tap_from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{init_params, InitScheme};

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let params = init_params(InitScheme::IdctSeeded, 30, 5).unwrap();
        let bytes = checkpoint_to_bytes(&params);
        assert_eq!(bytes.len(), 16 + 15 * 24 + 8 * 507_157);
        let back = checkpoint_from_bytes(&bytes, p()).unwrap();
        assert_eq!(back, params);
        assert_eq!(checkpoint_to_bytes(&back), bytes);
    }

    #[test]
    fn truncation_names_layer() {
        let bytes = checkpoint_to_bytes(&ModelParams::zeros(10).unwrap());
        let cut = &bytes[..bytes.len() - 4];
        match checkpoint_from_bytes(cut, p()) {
            Err(Error::Layer { layer: 16, detail }) => assert!(detail.contains("truncated")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_and_magic_are_checked() {
        let mut bytes = checkpoint_to_bytes(&ModelParams::zeros(10).unwrap());
        bytes[4] = 9;
        assert!(matches!(
            checkpoint_from_bytes(&bytes, p()),
            Err(Error::Format { .. })
        ));
        bytes[0] = b'X';
        assert!(checkpoint_from_bytes(&bytes, p()).is_err());
    }

    #[test]
    fn tap_roundtrip() {
        let t = Tensor::new(&[2, 1, 3], vec![0.5, -1.0, 2.0, 3.0, 1e300, -0.0]).unwrap();
        let bytes = tap_to_bytes(50, &t).unwrap();
        assert_eq!(&bytes[..4], b"TAP1");
        let back = tap_from_bytes(&bytes, p()).unwrap();
        assert_eq!(back.quality, 50);
        assert_eq!(back.tensor.shape(), &[2, 1, 3]);
        assert!(back
            .tensor
            .data()
            .iter()
            .zip(t.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(tap_from_bytes(&bytes[..bytes.len() - 1], p()).is_err());
    }
}
