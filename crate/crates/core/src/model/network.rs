//! Forward and backward passes over the fixed architecture.

use super::arch::{layer, RESIDUAL_BLOCKS};
use super::masks::{channel_extract, channel_extract_backward};
use super::params::{LayerParams, ModelParams, ParamGrads};
use crate::error::{Error, Result};
use crate::kspace::{GrayImage, KSpaceImage};
use crate::tensor::{
    conv2d, conv2d_backward_params, conv_transpose2d, conv_transpose2d_backward_params, relu,
    relu_backward, Tensor,
};

/// Intermediate feature maps of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTaps {
    /// Layer 1: per-frequency snapshots, `[64, H/8, W/8]`.
    pub channels: Tensor,
    /// Layer 2: spectral reconstruction, `[64, H, W]`.
    pub spectral: Tensor,
    /// Layer 4 after ReLU: the decoded image, `[1, H, W]`.
    pub decoded: Tensor,
    /// Merged output of each residual block (before the final ReLU), `[1, H, W]`.
    pub blocks: [Tensor; RESIDUAL_BLOCKS],
    /// Network output, `[1, H, W]`.
    pub output: Tensor,
}

impl ActivationTaps {
    pub const NAMES: [&'static str; 8] = [
        "l1_channels",
        "l2_spectral",
        "l4_decoded",
        "block1",
        "block2",
        "block3",
        "block4",
        "output",
    ];

    /// All eight taps in execution order, paired with their names.
    pub fn named(&self) -> [(&'static str, &Tensor); 8] {
        let t = [
            &self.channels,
            &self.spectral,
            &self.decoded,
            &self.blocks[0],
            &self.blocks[1],
            &self.blocks[2],
            &self.blocks[3],
            &self.output,
        ];
        std::array::from_fn(|i| (Self::NAMES[i], t[i]))
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Tensor,
    channels: Tensor,
    spectral: Tensor,
    l3: Tensor,
    /// Layer 4 before its ReLU.
    l4_pre: Tensor,
    decoded: Tensor,
    /// First and second convolution of each block.
    inner: [(Tensor, Tensor); RESIDUAL_BLOCKS],
    /// Merged block outputs; the last one is the pre-activation of the output.
    merged: [Tensor; RESIDUAL_BLOCKS],
}

impl ForwardCache {
    pub fn output(&self) -> Tensor {
        relu(&self.merged[RESIDUAL_BLOCKS - 1])
    }

    pub fn taps(&self) -> ActivationTaps {
        ActivationTaps {
            channels: self.channels.clone(),
            spectral: self.spectral.clone(),
            decoded: self.decoded.clone(),
            blocks: self.merged.clone(),
            output: self.output(),
        }
    }

    /// Pre-activations of the two ReLUs (layer 4 and the final merge).
    pub(crate) fn relu_inputs(&self) -> (&Tensor, &Tensor) {
        (&self.l4_pre, &self.merged[RESIDUAL_BLOCKS - 1])
    }

    /// Output of `layer` before any residual merge or activation, for layers whose
    /// output feeds the next convolution directly (1-3, and the first two
    /// convolutions of each residual block).
    pub fn linear_output(&self, layer: usize) -> Option<&Tensor> {
        match layer {
            1 => Some(&self.channels),
            2 => Some(&self.spectral),
            3 => Some(&self.l3),
            5..=16 => {
                let (b, k) = ((layer - 5) / 3, (layer - 5) % 3);
                match k {
                    0 => Some(&self.inner[b].0),
                    1 => Some(&self.inner[b].1),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    fn block_input(&self, b: usize) -> &Tensor {
        if b == 0 {
            &self.decoded
        } else {
            &self.merged[b - 1]
        }
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: ParamGrads,
    /// Gradient with respect to the k-space input, when requested.
    pub input: Option<Tensor>,
}

fn check_input(kspace: &Tensor) -> Result<()> {
    match *kspace.shape() {
        [1, h, w] if h > 0 && w > 0 && h % 8 == 0 && w % 8 == 0 => Ok(()),
        ref s => Err(Error::shape(
            "forward",
            format!("expected a [1, H, W] k-space tensor with H, W multiples of 8, got {s:?}"),
        )),
    }
}

fn conv_layer(x: &Tensor, params: &ModelParams, index: usize) -> Result<Tensor> {
    let p = params.layer(index);
    conv2d(x, &p.weight, &p.bias, &layer(index).conv_spec())
}

fn block_layers(b: usize) -> [usize; 3] {
    let first = 5 + 3 * b;
    [first, first + 1, first + 2]
}

fn run_block(x: &Tensor, params: &ModelParams, b: usize) -> Result<(Tensor, Tensor, Tensor)> {
    let [la, lb, lc] = block_layers(b);
    let a = conv_layer(x, params, la)?;
    let c = conv_layer(&a, params, lb)?;
    let mut merged = conv_layer(&c, params, lc)?;
    merged.axpy(1.0, x)?;
    Ok((a, c, merged))
}

/// Layers 1-4: channel split, spectral reconstruction, decoding convolutions.
fn decode_segment(kspace: &Tensor, params: &ModelParams) -> Result<[Tensor; 4]> {
    check_input(kspace)?;
    let channels = channel_extract(kspace)?;
    let p2 = params.layer(2);
    let spectral = conv_transpose2d(&channels, &p2.weight, &p2.bias, &layer(2).conv_spec())?;
    let l3 = conv_layer(&spectral, params, 3)?;
    let l4_pre = conv_layer(&l3, params, 4)?;
    Ok([channels, spectral, l3, l4_pre])
}

/// Runs the network on a `[1, H, W]` k-space tensor. Intermediates are dropped as
/// soon as they are consumed unless taps are requested.
pub fn forward(
    kspace: &Tensor,
    params: &ModelParams,
    want_taps: bool,
) -> Result<(Tensor, Option<ActivationTaps>)> {
    if want_taps {
        let cache = forward_train(kspace, params)?;
        let taps = cache.taps();
        return Ok((taps.output.clone(), Some(taps)));
    }
    let [_, _, _, l4_pre] = decode_segment(kspace, params)?;
    let mut x = relu(&l4_pre);
    for b in 0..RESIDUAL_BLOCKS {
        x = run_block(&x, params, b)?.2;
    }
    Ok((relu(&x), None))
}

/// Forward pass that keeps every activation needed by [`backward`].
pub fn forward_train(kspace: &Tensor, params: &ModelParams) -> Result<ForwardCache> {
    let [channels, spectral, l3, l4_pre] = decode_segment(kspace, params)?;
    let decoded = relu(&l4_pre);
    let mut inner = Vec::with_capacity(RESIDUAL_BLOCKS);
    let mut merged: Vec<Tensor> = Vec::with_capacity(RESIDUAL_BLOCKS);
    for b in 0..RESIDUAL_BLOCKS {
        let x = merged.last().unwrap_or(&decoded);
        let (a, c, m) = run_block(x, params, b)?;
        inner.push((a, c));
        merged.push(m);
    }
    Ok(ForwardCache {
        input: kspace.clone(),
        channels,
        spectral,
        l3,
        l4_pre,
        decoded,
        inner: inner.try_into().expect("one entry per block"),
        merged: merged.try_into().expect("one entry per block"),
    })
}

fn conv_grads(
    x: &Tensor,
    params: &ModelParams,
    index: usize,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<(Option<Tensor>, LayerParams)> {
    let (gx, weight, bias) = conv2d_backward_params(
        x,
        &params.layer(index).weight,
        &layer(index).conv_spec(),
        grad_out,
        want_input,
    )?;
    Ok((gx, LayerParams { weight, bias }))
}

/// Gradients of a scalar loss given `loss_grad = dL/d(output)`. The mask bank has
/// no parameters; its only role here is routing the optional input gradient.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    loss_grad: &Tensor,
    want_input: bool,
) -> Result<Gradients> {
    let mut grads: Vec<Option<LayerParams>> = vec![None; 15];
    let mut put = |index: usize, g: LayerParams| grads[index - 2] = Some(g);

    let mut g = relu_backward(&cache.merged[RESIDUAL_BLOCKS - 1], loss_grad)?;
    for b in (0..RESIDUAL_BLOCKS).rev() {
        let [la, lb, lc] = block_layers(b);
        let (a, c) = &cache.inner[b];
        let x = cache.block_input(b);
        let (gc, p) = conv_grads(c, params, lc, &g, true)?;
        put(lc, p);
        let (ga, p) = conv_grads(a, params, lb, &gc.expect("requested"), true)?;
        put(lb, p);
        let (gx, p) = conv_grads(x, params, la, &ga.expect("requested"), true)?;
        put(la, p);
        // The skip path carries `g` unchanged to the block input.
        g.axpy(1.0, &gx.expect("requested"))?;
    }

    let g4 = relu_backward(&cache.l4_pre, &g)?;
    let (g3, p) = conv_grads(&cache.l3, params, 4, &g4, true)?;
    put(4, p);
    let (g2, p) = conv_grads(&cache.spectral, params, 3, &g3.expect("requested"), true)?;
    put(3, p);
    let (g1, weight, bias) = conv_transpose2d_backward_params(
        &cache.channels,
        &params.layer(2).weight,
        &layer(2).conv_spec(),
        &g2.expect("requested"),
        want_input,
    )?;
    put(2, LayerParams { weight, bias });

    let input = match g1 {
        Some(g1) => Some(channel_extract_backward(&cache.input, &g1)?),
        None => None,
    };
    let layers = grads
        .into_iter()
        .map(|g| g.expect("every layer visited"))
        .collect();
    Ok(Gradients {
        params: ParamGrads::from_layers(layers),
        input,
    })
}

/// Decodes a k-space image with the model. Extents must already be block aligned,
/// which every [`KSpaceImage`] guarantees.
pub fn reconstruct(code: &KSpaceImage, params: &ModelParams) -> Result<GrayImage> {
    let (out, _) = forward(&code.to_tensor(), params, false)?;
    GrayImage::from_values(code.width(), code.height(), out.data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{init_params, InitScheme};

    #[test]
    fn zero_everything_gives_zero() {
        let p = ModelParams::zeros(10).unwrap();
        let (y, _) = forward(&Tensor::zeros(&[1, 16, 24]), &p, false).unwrap();
        assert_eq!(y.shape(), &[1, 16, 24]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tap_shapes() {
        let p = init_params(InitScheme::UniformFanIn, 10, 1).unwrap();
        let (y, taps) = forward(&Tensor::full(&[1, 32, 16], 1.0), &p, true).unwrap();
        let taps = taps.unwrap();
        assert_eq!(taps.channels.shape(), &[64, 4, 2]);
        assert_eq!(taps.spectral.shape(), &[64, 32, 16]);
        assert_eq!(taps.decoded.shape(), &[1, 32, 16]);
        for b in &taps.blocks {
            assert_eq!(b.shape(), &[1, 32, 16]);
        }
        assert_eq!(taps.output, y);
        let (plain, none) = forward(&Tensor::full(&[1, 32, 16], 1.0), &p, false).unwrap();
        assert!(none.is_none());
        assert_eq!(plain, y);
    }

    #[test]
    fn zero_loss_grad_gives_zero_grads() {
        let p = init_params(InitScheme::UniformFanIn, 10, 2).unwrap();
        let x = Tensor::full(&[1, 16, 16], 3.0);
        let cache = forward_train(&x, &p).unwrap();
        let g = backward(&p, &cache, &Tensor::zeros(&[1, 16, 16]), true).unwrap();
        assert_eq!(g.params.norm(), 0.0);
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_unaligned_input() {
        let p = ModelParams::zeros(10).unwrap();
        assert!(forward(&Tensor::zeros(&[1, 12, 16]), &p, false).is_err());
        assert!(forward(&Tensor::zeros(&[2, 16, 16]), &p, false).is_err());
    }
}
