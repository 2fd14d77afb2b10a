//! The fixed 16-layer architecture table.

use crate::tensor::ConvSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    CodedMask,
    ConvTranspose,
    Conv,
}

impl LayerKind {
    pub fn code(self) -> u32 {
        match self {
            LayerKind::CodedMask => 0,
            LayerKind::ConvTranspose => 1,
            LayerKind::Conv => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(LayerKind::CodedMask),
            1 => Some(LayerKind::ConvTranspose),
            2 => Some(LayerKind::Conv),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub index: usize,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Applied after the residual merge, if any.
    pub activation: Activation,
    /// Layer whose output is added to this layer's convolution output.
    pub residual_source: Option<usize>,
}

const fn conv(
    index: usize,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    activation: Activation,
    residual_source: Option<usize>,
) -> LayerSpec {
    LayerSpec {
        index,
        kind: LayerKind::Conv,
        in_channels,
        out_channels,
        kernel,
        stride: 1,
        padding: kernel / 2,
        activation,
        residual_source,
    }
}

use Activation::{None as Linear, Relu};

/// Layers 1-16 in execution order. Each residual block is three convolutions
/// (1->64 k11, 64->16 k7, 16->1 k1) whose output is added to the block input;
/// ReLU follows the decoding segment (layer 4) and the final merge (layer 16).
pub const ARCHITECTURE: [LayerSpec; 16] = [
    LayerSpec {
        index: 1,
        kind: LayerKind::CodedMask,
        in_channels: 1,
        out_channels: 64,
        kernel: 8,
        stride: 8,
        padding: 0,
        activation: Linear,
        residual_source: None,
    },
    LayerSpec {
        index: 2,
        kind: LayerKind::ConvTranspose,
        in_channels: 64,
        out_channels: 64,
        kernel: 8,
        stride: 8,
        padding: 0,
        activation: Linear,
        residual_source: None,
    },
    conv(3, 64, 8, 5, Linear, None),
    conv(4, 8, 1, 3, Relu, None),
    conv(5, 1, 64, 11, Linear, None),
    conv(6, 64, 16, 7, Linear, None),
    conv(7, 16, 1, 1, Linear, Some(4)),
    conv(8, 1, 64, 11, Linear, None),
    conv(9, 64, 16, 7, Linear, None),
    conv(10, 16, 1, 1, Linear, Some(7)),
    conv(11, 1, 64, 11, Linear, None),
    conv(12, 64, 16, 7, Linear, None),
    conv(13, 16, 1, 1, Linear, Some(10)),
    conv(14, 1, 64, 11, Linear, None),
    conv(15, 64, 16, 7, Linear, None),
    conv(16, 16, 1, 1, Relu, Some(13)),
];

/// First and last index of the trainable decoding segment.
pub const DECODING_LAYERS: (usize, usize) = (2, 4);
pub const ENHANCEMENT_LAYERS: (usize, usize) = (5, 16);
pub const FIRST_TRAINABLE: usize = 2;
pub const LAYER_COUNT: usize = 16;
pub const RESIDUAL_BLOCKS: usize = 4;

pub fn layer(index: usize) -> &'static LayerSpec {
    &ARCHITECTURE[index - 1]
}

impl LayerSpec {
    pub fn is_trainable(&self) -> bool {
        self.kind != LayerKind::CodedMask
    }

    /// Weight layout: `[out, in, k, k]` for convolutions, `[in, out, k, k]` for the
    /// transposed convolution and the mask bank's `[64, 1, 8, 8]`.
    pub fn weight_shape(&self) -> [usize; 4] {
        match self.kind {
            LayerKind::ConvTranspose => [
                self.in_channels,
                self.out_channels,
                self.kernel,
                self.kernel,
            ],
            _ => [
                self.out_channels,
                self.in_channels,
                self.kernel,
                self.kernel,
            ],
        }
    }

    pub fn conv_spec(&self) -> ConvSpec {
        ConvSpec::square(self.out_channels, self.in_channels, self.kernel)
            .with_stride(self.stride)
            .with_padding(self.padding)
    }

    /// Number of input terms contributing to one output value.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::ConvTranspose => {
                let per_axis = self.kernel.div_ceil(self.stride);
                self.in_channels * per_axis * per_axis
            }
            _ => self.in_channels * self.kernel * self.kernel,
        }
    }

    pub fn parameter_count(&self) -> usize {
        if !self.is_trainable() {
            return 0;
        }
        self.weight_shape().iter().product::<usize>() + self.out_channels
    }
}
