//! Dense f64 tensors and the differentiable operations the network is built from.
//!
//! Every forward operation has an exact analytic backward counterpart. Shapes are
//! never broadcast: operands must agree exactly or the call is rejected.

mod conv;
mod gemm;
mod ops;

pub use conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, ConvGrads};
pub use ops::{add, mse_loss, relu, relu_backward};

pub(crate) use conv::{conv2d_backward_params, conv_transpose2d_backward_params};

use crate::error::{Error, Result};

/// Row-major array of `f64` with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {shape:?} needs {expected} values, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// Euclidean inner product of two tensors of identical shape.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        same_shape("dot", self, other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        self.map(|v| alpha * v)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        same_shape("axpy", self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Plane `c` of a `[C, H, W]` tensor.
    pub fn channel(&self, c: usize) -> &[f64] {
        assert_eq!(self.shape.len(), 3, "channel() needs a [C, H, W] tensor");
        let plane = self.shape[1] * self.shape[2];
        &self.data[c * plane..(c + 1) * plane]
    }
}

pub(crate) fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

/// Geometry of a 2-D convolution or transposed convolution.
///
/// For `conv2d` the weights are `[out_channels, in_channels, kernel_h, kernel_w]`.
/// For `conv_transpose2d` they are `[in_channels, out_channels, kernel_h, kernel_w]`,
/// where `in_channels` counts the channels of the transposed op's input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvSpec {
    pub fn new(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        ConvSpec {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            stride_h: 1,
            stride_w: 1,
            pad_h: 0,
            pad_w: 0,
        }
    }

    pub fn square(out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        Self::new(out_channels, in_channels, kernel, kernel)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride_h = stride;
        self.stride_w = stride;
        self
    }

    pub fn with_padding(mut self, pad: usize) -> Self {
        self.pad_h = pad;
        self.pad_w = pad;
        self
    }

    /// "Same" padding for odd kernels at stride 1.
    pub fn same(out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        Self::square(out_channels, in_channels, kernel).with_padding(kernel / 2)
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        if self.stride_h == 0 || self.stride_w == 0 {
            return Err(Error::shape(op, "stride must be positive"));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::shape(op, "kernel extents must be positive"));
        }
        Ok(())
    }

    /// Output extents of the forward convolution. The stride must tile the padded input exactly.
    pub fn conv_output(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        self.validate("conv2d")?;
        let out_h = conv_extent("height", height, self.pad_h, self.kernel_h, self.stride_h)?;
        let out_w = conv_extent("width", width, self.pad_w, self.kernel_w, self.stride_w)?;
        Ok((out_h, out_w))
    }

    /// Output extents of the transposed convolution: `(H - 1) * stride + kernel - 2 * pad`.
    pub fn transpose_output(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        self.validate("conv_transpose2d")?;
        let extent = |dim: &str, n: usize, s: usize, k: usize, p: usize| -> Result<usize> {
            if n == 0 {
                return Err(Error::shape(
                    "conv_transpose2d",
                    format!("empty input {dim}"),
                ));
            }
            let full = (n - 1) * s + k;
            if full <= 2 * p {
                return Err(Error::shape(
                    "conv_transpose2d",
                    format!("padding {p} consumes the whole output {dim}"),
                ));
            }
            Ok(full - 2 * p)
        };
        Ok((
            extent("height", height, self.stride_h, self.kernel_h, self.pad_h)?,
            extent("width", width, self.stride_w, self.kernel_w, self.pad_w)?,
        ))
    }
}

fn conv_extent(dim: &str, n: usize, pad: usize, kernel: usize, stride: usize) -> Result<usize> {
    let padded = n + 2 * pad;
    if padded < kernel {
        return Err(Error::shape(
            "conv2d",
            format!("padded input {dim} {padded} smaller than kernel {kernel}"),
        ));
    }
    if (padded - kernel) % stride != 0 {
        return Err(Error::shape(
            "conv2d",
            format!("stride {stride} does not tile input {dim} {n} (pad {pad}, kernel {kernel})"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::new(&[2, 3], vec![0.0; 6]).unwrap().len(), 6);
    }

    #[test]
    fn conv_extents() {
        let spec = ConvSpec::square(64, 1, 8).with_stride(8);
        assert_eq!(spec.conv_output(128, 64).unwrap(), (16, 8));
        assert_eq!(spec.transpose_output(16, 8).unwrap(), (128, 64));
        assert!(spec.conv_output(12, 16).is_err());
        assert_eq!(
            ConvSpec::same(8, 64, 5).conv_output(20, 20).unwrap(),
            (20, 20)
        );
    }

    #[test]
    fn dot_requires_equal_shapes() {
        let a = Tensor::full(&[2, 2], 1.0);
        let b = Tensor::full(&[4], 1.0);
        assert!(a.dot(&b).is_err());
        assert_eq!(a.dot(&a).unwrap(), 4.0);
    }
}
