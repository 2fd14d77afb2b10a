//! Coded-mask channel extraction (layer 1).
//!
//! Mask `ch` is an 8x8 binary kernel with a single one at
//! `(ch mod 8, floor(ch / 8))`. Convolving the k-space grid with all 64 masks at
//! stride 8 separates it into 64 per-frequency snapshots. The masks are constants:
//! they never train, and in the backward pass they gate which snapshot receives
//! each input position's gradient.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::kspace::BLOCK;
use crate::tensor::{conv2d, conv2d_backward, ConvSpec, Tensor};

pub const CHANNELS: usize = 64;

/// Position `(row, col)` of the single one in mask `ch`.
pub fn mask_position(ch: usize) -> (usize, usize) {
    (ch % BLOCK, ch / BLOCK)
}

/// Spectral channel that owns in-block position `(row, col)`.
pub fn channel_at(row: usize, col: usize) -> usize {
    row + BLOCK * col
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodedMaskBank {
    masks: [[[u8; BLOCK]; BLOCK]; CHANNELS],
}

impl CodedMaskBank {
    pub fn mask(&self, ch: usize) -> &[[u8; BLOCK]; BLOCK] {
        &self.masks[ch]
    }

    /// The masks as `[64, 1, 8, 8]` convolution weights.
    pub fn weights(&self) -> Tensor {
        let data = self
            .masks
            .iter()
            .flat_map(|m| m.iter().flatten().map(|&v| v as f64))
            .collect();
        Tensor::new(&[CHANNELS, 1, BLOCK, BLOCK], data).expect("mask bank shape")
    }
}

pub fn build_masks() -> CodedMaskBank {
    let mut masks = [[[0u8; BLOCK]; BLOCK]; CHANNELS];
    for (ch, m) in masks.iter_mut().enumerate() {
        let (i, j) = mask_position(ch);
        m[i][j] = 1;
    }
    CodedMaskBank { masks }
}

fn mask_weights() -> &'static Tensor {
    static WEIGHTS: OnceLock<Tensor> = OnceLock::new();
    WEIGHTS.get_or_init(|| build_masks().weights())
}

fn spec() -> ConvSpec {
    ConvSpec::square(CHANNELS, 1, BLOCK).with_stride(BLOCK)
}

fn check_input(kspace: &Tensor) -> Result<()> {
    match *kspace.shape() {
        [1, h, w] if h % BLOCK == 0 && w % BLOCK == 0 && h > 0 && w > 0 => Ok(()),
        [1, h, w] => Err(Error::shape(
            "channel_extract",
            format!("extents {h}x{w} are not positive multiples of 8"),
        )),
        ref s => Err(Error::shape(
            "channel_extract",
            format!("expected a [1, H, W] k-space tensor, got {s:?}"),
        )),
    }
}

/// `[1, H, W]` k-space grid to `[64, H/8, W/8]` spectral snapshots (zero bias).
pub fn channel_extract(kspace: &Tensor) -> Result<Tensor> {
    check_input(kspace)?;
    conv2d(kspace, mask_weights(), &[0.0; CHANNELS], &spec())
}

/// Gradient with respect to the k-space grid: each position receives the
/// gradient of the one snapshot its mask selects.
pub fn channel_extract_backward(kspace: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    check_input(kspace)?;
    Ok(conv2d_backward(kspace, mask_weights(), &spec(), grad_out)?.input)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_masks() {
        let bank = build_masks();
        assert_eq!(bank.mask(0)[0][0], 1);
        assert_eq!(bank.mask(24)[0][3], 1);
        assert_eq!(bank.mask(9)[1][1], 1);
        for ch in 0..CHANNELS {
            let ones: u32 = bank.mask(ch).iter().flatten().map(|&v| v as u32).sum();
            assert_eq!(ones, 1);
        }
    }

    #[test]
    fn masks_partition_the_block() {
        let bank = build_masks();
        for i in 0..BLOCK {
            for j in 0..BLOCK {
                let s: u32 = (0..CHANNELS).map(|ch| bank.mask(ch)[i][j] as u32).sum();
                assert_eq!(s, 1);
                assert_eq!(mask_position(channel_at(i, j)), (i, j));
            }
        }
    }

    #[test]
    fn single_coefficient_lands_in_its_channel() {
        let mut x = Tensor::zeros(&[1, 16, 16]);
        x.data_mut()[8 * 16 + 3] = 5.0;
        let y = channel_extract(&x).unwrap();
        assert_eq!(y.shape(), &[64, 2, 2]);
        for ch in 0..CHANNELS {
            for (p, &v) in y.channel(ch).iter().enumerate() {
                let want = if ch == 24 && p == 2 { 5.0 } else { 0.0 };
                assert_eq!(v, want, "ch {ch} pos {p}");
            }
        }
    }

    #[test]
    fn ones_everywhere() {
        let y = channel_extract(&Tensor::full(&[1, 24, 8], 1.0)).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rejects_unaligned() {
        assert!(channel_extract(&Tensor::zeros(&[1, 12, 16])).is_err());
        assert!(channel_extract(&Tensor::zeros(&[2, 16, 16])).is_err());
    }
}
