//! Orthonormal 8x8 DCT-II and its inverse.

use std::sync::OnceLock;

pub type Block = [[f64; 8]; 8];

/// `basis()[u][x] = alpha(u) * cos((2x + 1) u pi / 16)`, rows orthonormal.
pub fn basis() -> &'static Block {
    static BASIS: OnceLock<Block> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; 8]; 8];
        for (u, row) in c.iter_mut().enumerate() {
            let alpha = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = alpha * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        c
    })
}

/// Pixel-domain image of the unit coefficient at (`u`, `v`): `basis[u][r] * basis[v][c]`.
pub fn basis_image(u: usize, v: usize) -> Block {
    let c = basis();
    let mut out = [[0.0; 8]; 8];
    for (r, row) in out.iter_mut().enumerate() {
        for (col, px) in row.iter_mut().enumerate() {
            *px = c[u][r] * c[v][col];
        }
    }
    out
}

/// `F = C B C^T`; coefficient `[u][v]` has vertical frequency `u`, horizontal `v`.
pub fn dct8x8(block: &Block) -> Block {
    let c = basis();
    let mut tmp = [[0.0; 8]; 8];
    // tmp = B C^T
    for r in 0..8 {
        for v in 0..8 {
            tmp[r][v] = (0..8).map(|x| block[r][x] * c[v][x]).sum();
        }
    }
    let mut out = [[0.0; 8]; 8];
    for u in 0..8 {
        for v in 0..8 {
            out[u][v] = (0..8).map(|r| c[u][r] * tmp[r][v]).sum();
        }
    }
    out
}

/// `B = C^T F C`.
pub fn idct8x8(coeffs: &Block) -> Block {
    let c = basis();
    let mut tmp = [[0.0; 8]; 8];
    // tmp = F C
    for u in 0..8 {
        for x in 0..8 {
            tmp[u][x] = (0..8).map(|v| coeffs[u][v] * c[v][x]).sum();
        }
    }
    let mut out = [[0.0; 8]; 8];
    for r in 0..8 {
        for x in 0..8 {
            out[r][x] = (0..8).map(|u| c[u][r] * tmp[u][x]).sum();
        }
    }
    out
}
