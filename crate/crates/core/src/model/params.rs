use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{self, LayerKind, LayerSpec, ARCHITECTURE, FIRST_TRAINABLE, LAYER_COUNT};
use super::masks::{mask_position, CHANNELS};
use crate::error::{Error, Result};
use crate::kspace::{dct::basis_image, QuantTable, BLOCK};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl LayerParams {
    fn zeros(spec: &LayerSpec) -> Self {
        LayerParams {
            weight: Tensor::zeros(&spec.weight_shape()),
            bias: vec![0.0; spec.out_channels],
        }
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

fn validate_layer(spec: &LayerSpec, p: &LayerParams) -> Result<()> {
    if p.weight.shape() != spec.weight_shape() {
        return Err(Error::Layer {
            layer: spec.index,
            detail: format!(
                "weight shape {:?}, expected {:?}",
                p.weight.shape(),
                spec.weight_shape()
            ),
        });
    }
    if p.bias.len() != spec.out_channels {
        return Err(Error::Layer {
            layer: spec.index,
            detail: format!(
                "bias length {}, expected {}",
                p.bias.len(),
                spec.out_channels
            ),
        });
    }
    Ok(())
}

/// Weights and biases of the trainable layers 2-16, plus the quality they serve.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    quality: u32,
    layers: Vec<LayerParams>,
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    layers: Vec<LayerParams>,
}

fn trainable_specs() -> impl Iterator<Item = &'static LayerSpec> {
    ARCHITECTURE.iter().filter(|s| s.is_trainable())
}

impl ModelParams {
    /// Rejects any layer whose shapes disagree with the architecture table.
    pub fn new(quality: u32, layers: Vec<LayerParams>) -> Result<Self> {
        QuantTable::check_quality(quality)?;
        if layers.len() != LAYER_COUNT - 1 {
            return Err(Error::InvalidArgument(format!(
                "expected {} trainable layers, got {}",
                LAYER_COUNT - 1,
                layers.len()
            )));
        }
        for (spec, p) in trainable_specs().zip(&layers) {
            validate_layer(spec, p)?;
        }
        Ok(ModelParams { quality, layers })
    }

    pub fn zeros(quality: u32) -> Result<Self> {
        Self::new(quality, trainable_specs().map(LayerParams::zeros).collect())
    }

    pub fn quality(&self) -> u32 {
        self.quality
    }

    pub fn set_quality(&mut self, quality: u32) -> Result<()> {
        QuantTable::check_quality(quality)?;
        self.quality = quality;
        Ok(())
    }

    /// Parameters of layer `index` (2..=16).
    pub fn layer(&self, index: usize) -> &LayerParams {
        &self.layers[index - FIRST_TRAINABLE]
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut LayerParams {
        &mut self.layers[index - FIRST_TRAINABLE]
    }

    /// `(layer index, params)` for layers 2-16.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &LayerParams)> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, p)| (i + FIRST_TRAINABLE, p))
    }

    /// `self += alpha * grads`
    pub fn apply(&mut self, alpha: f64, grads: &ParamGrads) {
        for (p, g) in self.layers.iter_mut().zip(&grads.layers) {
            p.weight.axpy(alpha, &g.weight).expect("same layout");
            for (b, gb) in p.bias.iter_mut().zip(&g.bias) {
                *b += alpha * gb;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Flat coordinate access in layer order, weights before biases.
    pub fn get_flat(&self, index: usize) -> f64 {
        let (l, off) = locate(&self.layers, index);
        let p = &self.layers[l];
        if off < p.weight.len() {
            p.weight.data()[off]
        } else {
            p.bias[off - p.weight.len()]
        }
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let (l, off) = locate(&self.layers, index);
        let p = &mut self.layers[l];
        if off < p.weight.len() {
            p.weight.data_mut()[off] = value;
        } else {
            p.bias[off - p.weight.len()] = value;
        }
    }

    pub fn flat_len(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }
}

/// Layers whose output enters the next convolution with nothing in between, so
/// their output channels can be rescaled without changing the network function.
pub fn rescalable(layer: usize) -> bool {
    matches!(layer, 2 | 3) || (layer >= 5 && layer <= 16 && (layer - 5) % 3 != 2)
}

impl ModelParams {
    /// Multiplies output channel `o` of `layer` (weights and bias) by `scales[o]`
    /// and divides the matching input channel of the next layer by the same
    /// factor. The network computes the same function afterwards, up to rounding.
    pub fn rescale_channels(&mut self, layer: usize, scales: &[f64]) -> Result<()> {
        if !rescalable(layer) {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} feeds an activation or a residual merge"
            )));
        }
        let spec = arch::layer(layer);
        if scales.len() != spec.out_channels || scales.iter().any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::InvalidArgument(format!(
                "layer {layer}: need {} positive finite scales",
                spec.out_channels
            )));
        }
        let [d0, d1, kh, kw] = spec.weight_shape();
        let plane = kh * kw;
        let p = self.layer_mut(layer);
        for a in 0..d0 {
            for b in 0..d1 {
                let o = if spec.kind == LayerKind::ConvTranspose {
                    b
                } else {
                    a
                };
                for v in &mut p.weight.data_mut()[(a * d1 + b) * plane..][..plane] {
                    *v *= scales[o];
                }
            }
        }
        for (b, s) in p.bias.iter_mut().zip(scales) {
            *b *= s;
        }
        let [n0, n1, nh, nw] = arch::layer(layer + 1).weight_shape();
        let next = self.layer_mut(layer + 1);
        for a in 0..n0 {
            for (i, s) in scales.iter().enumerate().take(n1) {
                for v in &mut next.weight.data_mut()[(a * n1 + i) * nh * nw..][..nh * nw] {
                    *v /= s;
                }
            }
        }
        Ok(())
    }
}

fn locate(layers: &[LayerParams], mut index: usize) -> (usize, usize) {
    for (l, p) in layers.iter().enumerate() {
        if index < p.len() {
            return (l, index);
        }
        index -= p.len();
    }
    panic!("flat parameter index out of range");
}

impl ParamGrads {
    pub fn zeros() -> Self {
        ParamGrads {
            layers: trainable_specs().map(LayerParams::zeros).collect(),
        }
    }

    pub(crate) fn from_layers(layers: Vec<LayerParams>) -> Self {
        debug_assert_eq!(layers.len(), LAYER_COUNT - 1);
        ParamGrads { layers }
    }

    pub fn layer(&self, index: usize) -> &LayerParams {
        &self.layers[index - FIRST_TRAINABLE]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &LayerParams)> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, p)| (i + FIRST_TRAINABLE, p))
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.axpy(1.0, &b.weight).expect("same layout");
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            for v in l.weight.data_mut() {
                *v *= alpha;
            }
            for v in &mut l.bias {
                *v *= alpha;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.data().iter().chain(&l.bias))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    pub fn get_flat(&self, index: usize) -> f64 {
        let (l, off) = locate(&self.layers, index);
        let p = &self.layers[l];
        if off < p.weight.len() {
            p.weight.data()[off]
        } else {
            p.bias[off - p.weight.len()]
        }
    }
}

/// Trainable parameter totals per segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub decoding: usize,
    pub enhancement: usize,
    pub total: usize,
}

pub fn param_count(params: &ModelParams) -> ParamCount {
    let count = |(lo, hi): (usize, usize)| -> usize {
        (lo..=hi)
            .map(|i| {
                let p = params.layer(i);
                p.weight.len() + p.bias.len()
            })
            .sum()
    };
    let decoding = count(arch::DECODING_LAYERS);
    let enhancement = count(arch::ENHANCEMENT_LAYERS);
    ParamCount {
        decoding,
        enhancement,
        total: decoding + enhancement,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// Weights from `U(-a, a)`, `a = sqrt(6 / fan_in)`; zero biases.
    UniformFanIn,
    /// Layers 2-4 reproduce the baseline decoder; residual blocks start as identities.
    IdctSeeded,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_fanin" | "uniform" => Ok(InitScheme::UniformFanIn),
            "idct_seeded" | "idct" => Ok(InitScheme::IdctSeeded),
            other => Err(Error::InvalidArgument(format!(
                "unknown init scheme {other:?} (expected uniform_fanin or idct_seeded)"
            ))),
        }
    }
}

impl std::fmt::Display for InitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitScheme::UniformFanIn => "uniform_fanin",
            InitScheme::IdctSeeded => "idct_seeded",
        })
    }
}

pub fn init_params(scheme: InitScheme, quality: u32, seed: u64) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = trainable_specs()
        .map(|spec| {
            let a = (6.0 / spec.fan_in() as f64).sqrt();
            let mut p = LayerParams::zeros(spec);
            for w in p.weight.data_mut() {
                *w = rng.gen_range(-a..a);
            }
            p
        })
        .collect();
    let mut params = ModelParams::new(quality, layers)?;
    if scheme == InitScheme::IdctSeeded {
        seed_decoder(&mut params)?;
    }
    Ok(params)
}

/// Overwrites layers 2-4 so that, untrained, they compute the baseline decoder
/// before rounding, and zeroes the closing 1x1 convolution of each residual block.
fn seed_decoder(params: &mut ModelParams) -> Result<()> {
    let table = QuantTable::for_quality(params.quality())?;

    // Layer 2: snapshot `ch` scatters its dequantized DCT basis image into channel `ch`.
    let l2 = params.layer_mut(2);
    l2.weight = Tensor::zeros(l2.weight.shape());
    l2.bias.fill(0.0);
    let k2 = BLOCK * BLOCK;
    for ch in 0..CHANNELS {
        let (i, j) = mask_position(ch);
        let img = basis_image(i, j);
        let q = table.get(i, j) as f64;
        let base = (ch * CHANNELS + ch) * k2;
        for (r, row) in img.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                l2.weight.data_mut()[base + r * BLOCK + c] = q * v;
            }
        }
    }

    // Layer 3: output channel 0 sums all 64 reconstructions at the kernel centre.
    let l3 = params.layer_mut(3);
    let (k3, centre3) = (5 * 5, 2 * 5 + 2);
    for ch in 0..CHANNELS {
        let w = &mut l3.weight.data_mut()[ch * k3..(ch + 1) * k3];
        w.fill(0.0);
        w[centre3] = 1.0;
    }
    l3.bias.fill(0.0);

    // Layer 4: pass channel 0 through and undo the level shift.
    let l4 = params.layer_mut(4);
    l4.weight = Tensor::zeros(l4.weight.shape());
    l4.weight.data_mut()[4] = 1.0;
    l4.bias[0] = 128.0;

    for closing in [7, 10, 13, 16] {
        let l = params.layer_mut(closing);
        l.weight = Tensor::zeros(l.weight.shape());
        l.bias.fill(0.0);
    }
    Ok(())
}
