mod common;

use std::f64::consts::PI;

use common::*;
use hrcnn::kspace::dct::{dct8x8, idct8x8, Block};
use hrcnn::kspace::*;
use hrcnn::metrics::psnr;
use proptest::prelude::*;
use rand::Rng;

/// Textbook definition, one coefficient at a time.
fn dct_by_definition(b: &Block) -> Block {
    let alpha = |u: usize| if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
    let mut out = [[0.0; 8]; 8];
    for u in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for y in 0..8 {
                for x in 0..8 {
                    acc += b[y][x]
                        * ((2 * y + 1) as f64 * u as f64 * PI / 16.0).cos()
                        * ((2 * x + 1) as f64 * v as f64 * PI / 16.0).cos();
                }
            }
            out[u][v] = alpha(u) * alpha(v) * acc;
        }
    }
    out
}

fn block_strategy() -> impl Strategy<Value = Block> {
    prop::array::uniform8(prop::array::uniform8(-300.0f64..300.0))
}

fn max_diff(a: &Block, b: &Block) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn norm(b: &Block) -> f64 {
    b.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn dct_matches_definition() {
    let mut r = rng(3);
    for _ in 0..50 {
        let mut b = [[0.0; 8]; 8];
        for v in b.iter_mut().flatten() {
            *v = r.gen_range(-128.0..128.0);
        }
        assert!(max_diff(&dct8x8(&b), &dct_by_definition(&b)) < 1e-10);
    }
}

#[test]
fn constant_block_has_only_dc() {
    for v in [-128.0, -3.5, 0.0, 17.0, 127.0] {
        let f = dct8x8(&[[v; 8]; 8]);
        assert!((f[0][0] - 8.0 * v).abs() < 1e-12);
        for (i, j) in (0..64).map(|k| (k / 8, k % 8)).filter(|&(i, j)| i + j > 0) {
            assert!(f[i][j].abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn roundtrip_and_norm(b in block_strategy()) {
        let f = dct8x8(&b);
        prop_assert!(max_diff(&idct8x8(&f), &b) < 1e-10);
        prop_assert!((norm(&f) - norm(&b)).abs() < 1e-10);
    }

    #[test]
    fn dct_is_linear(a in block_strategy(), b in block_strategy(), s in -4.0f64..4.0) {
        let mut mix = [[0.0; 8]; 8];
        for i in 0..8 {
            for j in 0..8 {
                mix[i][j] = s * a[i][j] + b[i][j];
            }
        }
        let (fa, fb, fm) = (dct8x8(&a), dct8x8(&b), dct8x8(&mix));
        let mut want = [[0.0; 8]; 8];
        for i in 0..8 {
            for j in 0..8 {
                want[i][j] = s * fa[i][j] + fb[i][j];
            }
        }
        // values reach ~1e3, so 1e-12 relative to that scale
        prop_assert!(max_diff(&fm, &want) < 1e-12 * 4096.0);
    }

    #[test]
    fn codec_never_fails(seed in any::<u64>(), bw in 1usize..5, bh in 1usize..5, q in 1u32..=100) {
        let img = random_image(&mut rng(seed), bw * 8, bh * 8);
        let out = decode_baseline(&encode(&img, q).unwrap());
        prop_assert_eq!((out.width(), out.height()), (img.width(), img.height()));
    }

    #[test]
    fn kspace_file_roundtrip(seed in any::<u64>(), bw in 1usize..4, bh in 1usize..4, q in 1u32..=100) {
        let mut r = rng(seed);
        let coeffs = (0..bw * bh * 64).map(|_| r.gen::<i16>()).collect();
        let code = KSpaceImage::new(bw * 8, bh * 8, q, coeffs).unwrap();
        prop_assert_eq!(KSpaceImage::from_bytes(&code.to_bytes()).unwrap(), code);
    }
}

#[test]
fn mid_gray_is_all_zero_at_tested_qualities() {
    let img = GrayImage::filled(32, 24, 128);
    for q in [10, 30, 50] {
        assert!(
            encode(&img, q).unwrap().coeffs().iter().all(|&c| c == 0),
            "Q {q}"
        );
    }
}

#[test]
fn offset_constant_dc_at_quality_50() {
    // DC = 8 * (136 - 128) = 64 over the Annex K divisor 16.
    let code = encode(&GrayImage::filled(8, 8, 136), 50).unwrap();
    assert_eq!(code.coeff(0, 0, 0, 0), 4);
    assert!(code.coeffs()[1..].iter().all(|&c| c == 0));
}

#[test]
fn quality_tables_monotone() {
    let t: Vec<_> = [10, 30, 50]
        .iter()
        .map(|&q| QuantTable::for_quality(q).unwrap())
        .collect();
    for i in 0..8 {
        for j in 0..8 {
            assert!(t[0].get(i, j) >= t[1].get(i, j) && t[1].get(i, j) >= t[2].get(i, j));
        }
    }
}

#[test]
fn psnr_non_decreasing_in_quality_on_natural_images() {
    let images = natural_images();
    assert!(images.len() >= 20, "only {} sample images", images.len());
    for (name, img) in &images {
        let p: Vec<f64> = [10, 30, 50]
            .iter()
            .map(|&q| psnr(img, &decode_baseline(&encode(img, q).unwrap())).unwrap())
            .collect();
        assert!(p[0] <= p[1] && p[1] <= p[2], "{name}: {p:?}");
    }
}

#[test]
fn high_quality_is_near_lossless() {
    for (name, img) in natural_images() {
        let p = psnr(&img, &decode_baseline(&encode(&img, 95).unwrap())).unwrap();
        assert!(p >= 40.0, "{name}: {p:.2} dB at Q 95");
    }
}

#[test]
fn reencoding_a_decoded_image_is_nearly_stable() {
    // Report-only: rounding to 8 bits can nudge a few coefficients by one step.
    let (name, img) = natural_images().into_iter().next().unwrap();
    for q in [10, 50] {
        let code = encode(&img, q).unwrap();
        let again = encode(&decode_baseline(&code), q).unwrap();
        let changed = code
            .coeffs()
            .iter()
            .zip(again.coeffs())
            .filter(|(a, b)| a != b)
            .count();
        let worst = code
            .coeffs()
            .iter()
            .zip(again.coeffs())
            .map(|(a, b)| (a - b).abs())
            .max()
            .unwrap();
        println!(
            "{name} Q{q}: {changed} of {} coefficients moved, by at most {worst}",
            code.coeffs().len()
        );
    }
}
