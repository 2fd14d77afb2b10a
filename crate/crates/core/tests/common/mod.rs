#![allow(dead_code)]

use hrcnn::tensor::{ConvSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct-loop cross-correlation over a `[C, H, W]` input; floor division of the
/// output extent so the oracle does not depend on the implementation's shape rules.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, bias: &[f64], s: &ConvSpec) -> Tensor {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let oh = (h + 2 * s.pad_h - s.kernel_h) / s.stride_h + 1;
    let ow = (wd + 2 * s.pad_w - s.kernel_w) / s.stride_w + 1;
    let mut out = vec![0.0; s.out_channels * oh * ow];
    for o in 0..s.out_channels {
        for y in 0..oh {
            for xo in 0..ow {
                let mut acc = bias[o];
                for ci in 0..c {
                    for ky in 0..s.kernel_h {
                        for kx in 0..s.kernel_w {
                            let iy = (y * s.stride_h + ky) as isize - s.pad_h as isize;
                            let ix = (xo * s.stride_w + kx) as isize - s.pad_w as isize;
                            if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= wd {
                                continue;
                            }
                            let wv = w.data()[((o * c + ci) * s.kernel_h + ky) * s.kernel_w + kx];
                            acc += wv * x.data()[(ci * h + iy as usize) * wd + ix as usize];
                        }
                    }
                }
                out[(o * oh + y) * ow + xo] = acc;
            }
        }
    }
    Tensor::new(&[s.out_channels, oh, ow], out).unwrap()
}

/// Direct scatter form of the transposed convolution, weights `[Cin, Cout, kh, kw]`.
pub fn naive_conv_transpose2d(x: &Tensor, w: &Tensor, bias: &[f64], s: &ConvSpec) -> Tensor {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let co = s.out_channels;
    let oh = (h - 1) * s.stride_h + s.kernel_h - 2 * s.pad_h;
    let ow = (wd - 1) * s.stride_w + s.kernel_w - 2 * s.pad_w;
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for v in &mut out[o * oh * ow..(o + 1) * oh * ow] {
            *v = bias[o];
        }
    }
    for c in 0..ci {
        for y in 0..h {
            for xi in 0..wd {
                let v = x.data()[(c * h + y) * wd + xi];
                for o in 0..co {
                    for ky in 0..s.kernel_h {
                        for kx in 0..s.kernel_w {
                            let oy = (y * s.stride_h + ky) as isize - s.pad_h as isize;
                            let ox = (xi * s.stride_w + kx) as isize - s.pad_w as isize;
                            if oy < 0 || ox < 0 || oy as usize >= oh || ox as usize >= ow {
                                continue;
                            }
                            let wv = w.data()[((c * co + o) * s.kernel_h + ky) * s.kernel_w + kx];
                            out[(o * oh + oy as usize) * ow + ox as usize] += wv * v;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[co, oh, ow], out).unwrap()
}

/// Central difference of `f` with respect to `x[i]`.
pub fn central_difference(x: &Tensor, i: usize, h: f64, f: &mut impl FnMut(&Tensor) -> f64) -> f64 {
    let mut xp = x.clone();
    xp.data_mut()[i] += h;
    let mut xm = x.clone();
    xm.data_mut()[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`: relative, with an absolute guard for
/// components whose true value is zero.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// The bundled sample photographs, cropped to whole 8x8 blocks.
pub fn natural_images() -> Vec<(String, hrcnn::kspace::GrayImage)> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/natural");
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let img = hrcnn::kspace::read_image(&p).unwrap();
            let (w, h) = (img.width() / 8 * 8, img.height() / 8 * 8);
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, img.crop(0, 0, w, h).unwrap())
        })
        .collect()
}

pub fn random_image(rng: &mut impl Rng, width: usize, height: usize) -> hrcnn::kspace::GrayImage {
    hrcnn::kspace::GrayImage::new(
        width,
        height,
        (0..width * height).map(|_| rng.gen()).collect(),
    )
    .unwrap()
}
