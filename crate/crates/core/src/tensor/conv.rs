//! Convolution and transposed convolution via patch matrices and GEMM.
//!
//! Both ops share one patch geometry: a convolution reads patches of a large grid
//! (`im2col`) and a transposed convolution scatters patches back onto it (`col2im`).

use super::gemm::{gemm, MatMut, MatRef};
use super::{ConvSpec, Tensor};
use crate::error::{Error, Result};

/// Upper bound on the number of f64 values in one patch-matrix tile.
const COL_BUDGET: usize = 1 << 19;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

/// Patch geometry: a `channels x big_h x big_w` grid read with a `kh x kw` window
/// yields a `small_h x small_w` grid of positions.
#[derive(Clone, Copy, Debug)]
struct Patches {
    channels: usize,
    big_h: usize,
    big_w: usize,
    small_h: usize,
    small_w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
}

impl Patches {
    fn new(spec: &ConvSpec, channels: usize, big: (usize, usize), small: (usize, usize)) -> Self {
        Patches {
            channels,
            big_h: big.0,
            big_w: big.1,
            small_h: small.0,
            small_w: small.1,
            kh: spec.kernel_h,
            kw: spec.kernel_w,
            sh: spec.stride_h,
            sw: spec.stride_w,
            ph: spec.pad_h,
            pw: spec.pad_w,
        }
    }

    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.small_h * self.small_w
    }

    /// The patch matrix is the grid itself: 1x1 kernel, unit stride, no padding.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    fn tile(&self) -> usize {
        (COL_BUDGET / self.rows().max(1)).clamp(1, self.positions().max(1))
    }

    /// Calls `f(row, t, big_index)` for every in-bounds patch entry of positions `p0..p1`.
    #[inline(always)]
    fn for_each(&self, p0: usize, p1: usize, mut f: impl FnMut(usize, usize, usize)) {
        let plane = self.big_h * self.big_w;
        for c in 0..self.channels {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let (mut sy, mut sx) = (p0 / self.small_w, p0 % self.small_w);
                    for t in 0..p1 - p0 {
                        let iy = (sy * self.sh + ky) as isize - self.ph as isize;
                        let ix = (sx * self.sw + kx) as isize - self.pw as isize;
                        if iy >= 0
                            && ix >= 0
                            && (iy as usize) < self.big_h
                            && (ix as usize) < self.big_w
                        {
                            f(row, t, c * plane + iy as usize * self.big_w + ix as usize);
                        }
                        sx += 1;
                        if sx == self.small_w {
                            sx = 0;
                            sy += 1;
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, big: &[f64], p0: usize, p1: usize, col: &mut [f64]) {
        let np = p1 - p0;
        col[..self.rows() * np].fill(0.0);
        self.for_each(p0, p1, |row, t, idx| col[row * np + t] = big[idx]);
    }

    fn col2im(&self, col: &[f64], p0: usize, p1: usize, big: &mut [f64]) {
        let np = p1 - p0;
        self.for_each(p0, p1, |row, t, idx| big[idx] += col[row * np + t]);
    }
}

/// Splits `[C, H, W]` or `[N, C, H, W]` into `(N, C, H, W)`.
fn batch_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(Error::shape(
            op,
            format!("expected [C, H, W] or [N, C, H, W] input, got {s:?}"),
        )),
    }
}

fn output_shape(input: &Tensor, c: usize, h: usize, w: usize) -> Vec<usize> {
    if input.shape().len() == 4 {
        vec![input.shape()[0], c, h, w]
    } else {
        vec![c, h, w]
    }
}

fn check_weights(op: &'static str, weights: &Tensor, expected: [usize; 4]) -> Result<()> {
    if weights.shape() != expected {
        return Err(Error::shape(
            op,
            format!("weights {:?}, expected {:?}", weights.shape(), expected),
        ));
    }
    Ok(())
}

fn check_bias(op: &'static str, bias: &[f64], channels: usize) -> Result<()> {
    if bias.len() != channels {
        return Err(Error::shape(
            op,
            format!(
                "bias length {} does not match output channels {channels}",
                bias.len()
            ),
        ));
    }
    Ok(())
}

fn check_channels(op: &'static str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::shape(
            op,
            format!("input channels {got} does not match spec in_channels {want}"),
        ));
    }
    Ok(())
}

fn check_grad_out(op: &'static str, grad_out: &Tensor, expected: &[usize]) -> Result<()> {
    if grad_out.shape() != expected {
        return Err(Error::shape(
            op,
            format!(
                "grad_out {:?} differs from forward output {expected:?}",
                grad_out.shape()
            ),
        ));
    }
    Ok(())
}

/// Validated geometry of a convolution call: `(batch, patches, output shape)`.
fn conv_setup(
    op: &'static str,
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
) -> Result<(usize, Patches, Vec<usize>)> {
    let (n, c, h, w) = batch_dims(op, input)?;
    check_channels(op, c, spec.in_channels)?;
    check_weights(
        op,
        weights,
        [
            spec.out_channels,
            spec.in_channels,
            spec.kernel_h,
            spec.kernel_w,
        ],
    )?;
    let (oh, ow) = spec.conv_output(h, w)?;
    let patches = Patches::new(spec, c, (h, w), (oh, ow));
    Ok((n, patches, output_shape(input, spec.out_channels, oh, ow)))
}

fn transpose_setup(
    op: &'static str,
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
) -> Result<(usize, Patches, Vec<usize>)> {
    let (n, c, h, w) = batch_dims(op, input)?;
    check_channels(op, c, spec.in_channels)?;
    check_weights(
        op,
        weights,
        [
            spec.in_channels,
            spec.out_channels,
            spec.kernel_h,
            spec.kernel_w,
        ],
    )?;
    let (oh, ow) = spec.transpose_output(h, w)?;
    // The transposed op's output is the big grid; make sure the forward
    // convolution over it lands back on the input extents.
    if spec.conv_output(oh, ow)? != (h, w) {
        return Err(Error::shape(op, "transposed geometry is not invertible"));
    }
    let patches = Patches::new(spec, spec.out_channels, (oh, ow), (h, w));
    Ok((n, patches, output_shape(input, spec.out_channels, oh, ow)))
}

/// 2-D cross-correlation with zero padding; `bias[c]` is added to output channel `c`.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &[f64], spec: &ConvSpec) -> Result<Tensor> {
    const OP: &str = "conv2d";
    let (n, g, out_shape) = conv_setup(OP, input, weights, spec)?;
    check_bias(OP, bias, spec.out_channels)?;

    let co = spec.out_channels;
    let k = g.rows();
    let positions = g.positions();
    let in_len = spec.in_channels * g.big_h * g.big_w;
    let out_len = co * positions;
    let tile = g.tile();
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; k * tile]
    };
    let mut out = vec![0.0; n * out_len];

    for b in 0..n {
        let x = &input.data()[b * in_len..(b + 1) * in_len];
        let y = &mut out[b * out_len..(b + 1) * out_len];
        for (o, plane) in y.chunks_exact_mut(positions).enumerate() {
            plane.fill(bias[o]);
        }
        for p0 in (0..positions).step_by(tile) {
            let np = tile.min(positions - p0);
            let patch = if g.is_pointwise() {
                MatRef::column_block(x, k, positions, p0, np)
            } else {
                g.im2col(x, p0, p0 + np, &mut col);
                MatRef::row_major(&col[..k * np], k, np)
            };
            gemm(
                1.0,
                MatRef::row_major(weights.data(), co, k),
                patch,
                1.0,
                &mut MatMut::column_block(y, co, positions, p0, np),
            );
        }
    }
    Tensor::new(&out_shape, out)
}

/// Exact gradients of [`conv2d`] given the gradient of its output.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let (gx, gw, gb) = conv2d_backward_params(input, weights, spec, grad_out, true)?;
    Ok(ConvGrads {
        input: gx.expect("requested input gradient"),
        weights: gw,
        bias: gb,
    })
}

pub(crate) fn conv2d_backward_params(
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<(Option<Tensor>, Tensor, Vec<f64>)> {
    const OP: &str = "conv2d_backward";
    let (n, g, out_shape) = conv_setup(OP, input, weights, spec)?;
    check_grad_out(OP, grad_out, &out_shape)?;

    let co = spec.out_channels;
    let k = g.rows();
    let positions = g.positions();
    let in_len = spec.in_channels * g.big_h * g.big_w;
    let out_len = co * positions;
    let tile = g.tile();
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; k * tile]
    };
    let mut gcol = if want_input {
        vec![0.0; k * tile]
    } else {
        Vec::new()
    };

    let mut gw = vec![0.0; co * k];
    let mut gb = vec![0.0; co];
    let mut gx = if want_input {
        vec![0.0; input.len()]
    } else {
        Vec::new()
    };

    for b in 0..n {
        let x = &input.data()[b * in_len..(b + 1) * in_len];
        let gy = &grad_out.data()[b * out_len..(b + 1) * out_len];
        for (o, plane) in gy.chunks_exact(positions).enumerate() {
            gb[o] += plane.iter().sum::<f64>();
        }
        for p0 in (0..positions).step_by(tile) {
            let np = tile.min(positions - p0);
            let gy_tile = MatRef::column_block(gy, co, positions, p0, np);
            let patch = if g.is_pointwise() {
                MatRef::column_block(x, k, positions, p0, np)
            } else {
                g.im2col(x, p0, p0 + np, &mut col);
                MatRef::row_major(&col[..k * np], k, np)
            };
            gemm(
                1.0,
                gy_tile,
                patch.t(),
                1.0,
                &mut MatMut::row_major(&mut gw, co, k),
            );

            if want_input {
                let gxb = &mut gx[b * in_len..(b + 1) * in_len];
                let w_t = MatRef::row_major(weights.data(), co, k).t();
                if g.is_pointwise() {
                    gemm(
                        1.0,
                        w_t,
                        gy_tile,
                        1.0,
                        &mut MatMut::column_block(gxb, k, positions, p0, np),
                    );
                } else {
                    gemm(
                        1.0,
                        w_t,
                        gy_tile,
                        0.0,
                        &mut MatMut::row_major(&mut gcol[..k * np], k, np),
                    );
                    g.col2im(&gcol[..k * np], p0, p0 + np, gxb);
                }
            }
        }
    }

    let gx = if want_input {
        Some(Tensor::new(input.shape(), gx)?)
    } else {
        None
    };
    Ok((gx, Tensor::new(weights.shape(), gw)?, gb))
}

/// Transposed convolution: multiplication by the transpose of the matrix of
/// `conv2d` with the same weights and geometry, plus a per-channel bias.
pub fn conv_transpose2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    spec: &ConvSpec,
) -> Result<Tensor> {
    const OP: &str = "conv_transpose2d";
    let (n, g, out_shape) = transpose_setup(OP, input, weights, spec)?;
    check_bias(OP, bias, spec.out_channels)?;

    let ci = spec.in_channels;
    let k = g.rows();
    let positions = g.positions();
    let in_len = ci * positions;
    let out_len = spec.out_channels * g.big_h * g.big_w;
    let tile = g.tile();
    let mut col = vec![0.0; k * tile];
    let mut out = vec![0.0; n * out_len];

    for b in 0..n {
        let x = &input.data()[b * in_len..(b + 1) * in_len];
        let y = &mut out[b * out_len..(b + 1) * out_len];
        for (o, plane) in y.chunks_exact_mut(g.big_h * g.big_w).enumerate() {
            plane.fill(bias[o]);
        }
        for p0 in (0..positions).step_by(tile) {
            let np = tile.min(positions - p0);
            gemm(
                1.0,
                MatRef::row_major(weights.data(), ci, k).t(),
                MatRef::column_block(x, ci, positions, p0, np),
                0.0,
                &mut MatMut::row_major(&mut col[..k * np], k, np),
            );
            g.col2im(&col[..k * np], p0, p0 + np, y);
        }
    }
    Tensor::new(&out_shape, out)
}

/// Exact gradients of [`conv_transpose2d`]. The input gradient is a forward
/// convolution of `grad_out` with the same weights.
pub fn conv_transpose2d_backward(
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let (gx, gw, gb) = conv_transpose2d_backward_params(input, weights, spec, grad_out, true)?;
    Ok(ConvGrads {
        input: gx.expect("requested input gradient"),
        weights: gw,
        bias: gb,
    })
}

pub(crate) fn conv_transpose2d_backward_params(
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<(Option<Tensor>, Tensor, Vec<f64>)> {
    const OP: &str = "conv_transpose2d_backward";
    let (n, g, out_shape) = transpose_setup(OP, input, weights, spec)?;
    check_grad_out(OP, grad_out, &out_shape)?;

    let ci = spec.in_channels;
    let k = g.rows();
    let positions = g.positions();
    let in_len = ci * positions;
    let big_plane = g.big_h * g.big_w;
    let out_len = spec.out_channels * big_plane;
    let tile = g.tile();
    let mut gcol = vec![0.0; k * tile];

    let mut gw = vec![0.0; ci * k];
    let mut gb = vec![0.0; spec.out_channels];
    let mut gx = if want_input {
        vec![0.0; input.len()]
    } else {
        Vec::new()
    };

    for b in 0..n {
        let x = &input.data()[b * in_len..(b + 1) * in_len];
        let gy = &grad_out.data()[b * out_len..(b + 1) * out_len];
        for (o, plane) in gy.chunks_exact(big_plane).enumerate() {
            gb[o] += plane.iter().sum::<f64>();
        }
        for p0 in (0..positions).step_by(tile) {
            let np = tile.min(positions - p0);
            g.im2col(gy, p0, p0 + np, &mut gcol);
            let patch = MatRef::row_major(&gcol[..k * np], k, np);
            gemm(
                1.0,
                MatRef::column_block(x, ci, positions, p0, np),
                patch.t(),
                1.0,
                &mut MatMut::row_major(&mut gw, ci, k),
            );
            if want_input {
                let gxb = &mut gx[b * in_len..(b + 1) * in_len];
                gemm(
                    1.0,
                    MatRef::row_major(weights.data(), ci, k),
                    patch,
                    0.0,
                    &mut MatMut::column_block(gxb, ci, positions, p0, np),
                );
            }
        }
    }

    let gx = if want_input {
        Some(Tensor::new(input.shape(), gx)?)
    } else {
        None
    };
    Ok((gx, Tensor::new(weights.shape(), gw)?, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_scaling_identity() {
        let x = Tensor::new(&[1, 2, 3], vec![1.0, -2.0, 3.5, 0.0, 7.0, -1.25]).unwrap();
        let w = Tensor::new(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let y = conv2d(&x, &w, &[0.0], &ConvSpec::square(1, 1, 1)).unwrap();
        let want: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(y.data(), &want[..]);
    }

    #[test]
    fn zero_weights_give_bias_planes() {
        let x = Tensor::full(&[3, 6, 6], 9.0);
        let spec = ConvSpec::same(2, 3, 3);
        let w = Tensor::zeros(&[2, 3, 3, 3]);
        let y = conv2d(&x, &w, &[1.5, -4.0], &spec).unwrap();
        assert!(y.channel(0).iter().all(|&v| v == 1.5));
        assert!(y.channel(1).iter().all(|&v| v == -4.0));
    }

    #[test]
    fn single_block_broadcast() {
        let x = Tensor::new(&[1, 1, 1], vec![3.25]).unwrap();
        let w = Tensor::full(&[1, 1, 8, 8], 1.0);
        let spec = ConvSpec::square(1, 1, 8).with_stride(8);
        let y = conv_transpose2d(&x, &w, &[0.0], &spec).unwrap();
        assert_eq!(y.shape(), &[1, 8, 8]);
        assert!(y.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn spectral_expansion_shape() {
        let x = Tensor::zeros(&[64, 2, 2]);
        let w = Tensor::zeros(&[64, 64, 8, 8]);
        let spec = ConvSpec::square(64, 64, 8).with_stride(8);
        let y = conv_transpose2d(&x, &w, &[0.0; 64], &spec).unwrap();
        assert_eq!(y.shape(), &[64, 16, 16]);
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let x = Tensor::new(&[2, 4, 4], (0..32).map(|i| i as f64 * 0.3 - 4.0).collect()).unwrap();
        let spec = ConvSpec::same(3, 2, 3);
        let w = Tensor::full(&[3, 2, 3, 3], 0.7);
        let g = conv2d_backward(&x, &w, &spec, &Tensor::zeros(&[3, 4, 4])).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));

        let spec = ConvSpec::square(3, 2, 2).with_stride(2);
        let w = Tensor::full(&[2, 3, 2, 2], 0.7);
        let g = conv_transpose2d_backward(&x, &w, &spec, &Tensor::zeros(&[3, 8, 8])).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_adjoint_is_weight_scaling() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new(&[1, 1, 1, 1], vec![-0.5]).unwrap();
        let gy = Tensor::new(&[1, 2, 2], vec![4.0, -2.0, 0.5, 8.0]).unwrap();
        let g = conv2d_backward(&x, &w, &ConvSpec::square(1, 1, 1), &gy).unwrap();
        assert_eq!(g.input.data(), &[-2.0, 1.0, -0.25, -4.0]);
    }

    #[test]
    fn shape_errors_name_the_dimension() {
        let x = Tensor::zeros(&[2, 8, 8]);
        let w = Tensor::zeros(&[4, 3, 3, 3]);
        let err = conv2d(&x, &w, &[0.0; 4], &ConvSpec::same(4, 3, 3)).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");

        let w = Tensor::zeros(&[4, 2, 3, 3]);
        let err = conv2d(&x, &w, &[0.0; 3], &ConvSpec::same(4, 2, 3)).unwrap_err();
        assert!(err.to_string().contains("bias length"), "{err}");

        let err = conv2d(&x, &w, &[0.0; 4], &ConvSpec::same(4, 2, 5)).unwrap_err();
        assert!(err.to_string().contains("weights"), "{err}");

        let err = conv2d_backward(&x, &w, &ConvSpec::same(4, 2, 3), &Tensor::zeros(&[4, 7, 8]))
            .unwrap_err();
        assert!(err.to_string().contains("grad_out"), "{err}");
    }

    #[test]
    fn batched_input_matches_per_image() {
        let data: Vec<f64> = (0..2 * 2 * 5 * 5)
            .map(|i| ((i * 7) % 11) as f64 - 5.0)
            .collect();
        let batch = Tensor::new(&[2, 2, 5, 5], data.clone()).unwrap();
        let spec = ConvSpec::same(3, 2, 3);
        let w = Tensor::new(&[3, 2, 3, 3], (0..54).map(|i| (i as f64).sin()).collect()).unwrap();
        let y = conv2d(&batch, &w, &[0.1, 0.2, 0.3], &spec).unwrap();
        assert_eq!(y.shape(), &[2, 3, 5, 5]);
        for b in 0..2 {
            let single = Tensor::new(&[2, 5, 5], data[b * 50..(b + 1) * 50].to_vec()).unwrap();
            let ys = conv2d(&single, &w, &[0.1, 0.2, 0.3], &spec).unwrap();
            assert_eq!(&y.data()[b * 75..(b + 1) * 75], ys.data());
        }
    }
}
