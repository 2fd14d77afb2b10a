use crate::error::{Error, Result};

/// ITU-T T.81 Annex K luminance quantization table (rows: vertical frequency).
pub const ANNEX_K_LUMINANCE: [[u16; 8]; 8] = [
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
];

/// 8x8 table of quantizer step sizes, each in `[1, 255]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuantTable {
    q: [[u16; 8]; 8],
}

impl QuantTable {
    pub(crate) fn check_quality(quality: u32) -> Result<()> {
        if !(1..=100).contains(&quality) {
            return Err(Error::InvalidArgument(format!(
                "quality {quality} outside [1, 100]"
            )));
        }
        Ok(())
    }

    /// The Annex K table under IJG quality scaling.
    pub fn for_quality(quality: u32) -> Result<Self> {
        Self::check_quality(quality)?;
        let scale = if quality < 50 {
            5000 / quality
        } else {
            200 - 2 * quality
        };
        let mut q = [[0u16; 8]; 8];
        for (row, base_row) in q.iter_mut().zip(&ANNEX_K_LUMINANCE) {
            for (v, &base) in row.iter_mut().zip(base_row) {
                *v = ((scale * base as u32 + 50) / 100).clamp(1, 255) as u16;
            }
        }
        Ok(QuantTable { q })
    }

    pub fn get(&self, i: usize, j: usize) -> u16 {
        self.q[i][j]
    }

    pub fn rows(&self) -> &[[u16; 8]; 8] {
        &self.q
    }
}
