//! Convolutional building blocks: factor-`2^k` pooling convolutions,
//! factor-`2^k` upsampling transposed convolutions and global average pooling.
//!
//! A pooling convolution with stride `s > 1` uses a `2s × 2s` kernel with
//! padding `s/2`, which maps `h` to exactly `h/s`; its transpose maps `h` to
//! exactly `h·s`. Stride-1 convolutions are `3 × 3` with padding 1.

pub(crate) mod kernels;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub kernel: usize,
    pub padding: usize,
    /// Allow inputs not divisible by the stride, flooring the output size.
    pub truncate: bool,
}

impl ConvGeometry {
    /// Geometry that scales spatial size by exactly `factor` (a power of two),
    /// or a `3 × 3` same-size convolution for `factor == 1`.
    pub fn pooling(factor: usize) -> Result<Self> {
        if factor == 1 {
            return Ok(Self::same3x3());
        }
        if factor < 2 || !factor.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "pooling factor must be 1 or a power of two, got {factor}"
            )));
        }
        Ok(ConvGeometry {
            stride: factor,
            kernel: 2 * factor,
            padding: factor / 2,
            truncate: false,
        })
    }

    pub const fn same3x3() -> Self {
        ConvGeometry {
            stride: 1,
            kernel: 3,
            padding: 1,
            truncate: false,
        }
    }

    pub const fn pointwise() -> Self {
        ConvGeometry {
            stride: 1,
            kernel: 1,
            padding: 0,
            truncate: false,
        }
    }

    pub fn truncating(mut self) -> Self {
        self.truncate = true;
        self
    }

    /// Output spatial size of a convolution over an `h × w` input.
    pub fn conv_output(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let s = self.stride;
        if !self.truncate && (h % s != 0 || w % s != 0) {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!("spatial size {h}x{w} is not divisible by stride {s}"),
            });
        }
        let span = |len: usize| -> Result<usize> {
            let padded = len + 2 * self.padding;
            if padded < self.kernel {
                return Err(Error::InvalidShape {
                    op: "conv2d",
                    msg: format!(
                        "spatial size {h}x{w} is smaller than kernel {k}x{k} with padding {p}",
                        k = self.kernel,
                        p = self.padding
                    ),
                });
            }
            Ok((padded - self.kernel) / s + 1)
        };
        Ok((span(h)?, span(w)?))
    }

    /// Output spatial size of the transposed convolution over an `h × w` input.
    pub fn deconv_output(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let span = |len: usize| -> Result<usize> {
            let full = (len.max(1) - 1) * self.stride + self.kernel;
            if len == 0 || full < 2 * self.padding + 1 {
                return Err(Error::InvalidShape {
                    op: "deconv2d",
                    msg: format!("input {h}x{w} too small for the transposed geometry"),
                });
            }
            Ok(full - 2 * self.padding)
        };
        Ok((span(h)?, span(w)?))
    }
}

/// Standard deviation of the fan-in scaled Gaussian weight initializer.
pub fn fan_in_std(in_channels: usize, kernel: usize) -> f64 {
    (2.0 / (in_channels * kernel * kernel) as f64).sqrt()
}

/// Weights `(out, in, k, k)` and bias `(1, out, 1, 1)` of a convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub geometry: ConvGeometry,
}

impl<T: Real> ConvParams<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, geometry: ConvGeometry) -> Self {
        let k = geometry.kernel;
        ConvParams {
            weight: Tensor::zeros(Shape::new(out_channels, in_channels, k, k)),
            bias: Tensor::zeros(Shape::new(1, out_channels, 1, 1)),
            geometry,
        }
    }

    pub fn init<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        rng: &mut R,
    ) -> Self {
        let k = geometry.kernel;
        ConvParams {
            weight: Tensor::randn(
                Shape::new(out_channels, in_channels, k, k),
                fan_in_std(in_channels, k),
                rng,
            ),
            bias: Tensor::zeros(Shape::new(1, out_channels, 1, 1)),
            geometry,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n()
    }

    /// Records weight and bias on the tape.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> ConvVars {
        ConvVars {
            weight: tape.leaf(self.weight.clone().with_requires_grad(requires_grad)),
            bias: tape.leaf(self.bias.clone().with_requires_grad(requires_grad)),
            geometry: self.geometry,
        }
    }
}

/// Weights `(in, out, k, k)` and bias `(1, out, 1, 1)` of a transposed
/// convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct DeconvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub geometry: ConvGeometry,
}

impl<T: Real> DeconvParams<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, geometry: ConvGeometry) -> Self {
        let k = geometry.kernel;
        DeconvParams {
            weight: Tensor::zeros(Shape::new(in_channels, out_channels, k, k)),
            bias: Tensor::zeros(Shape::new(1, out_channels, 1, 1)),
            geometry,
        }
    }

    pub fn init<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        rng: &mut R,
    ) -> Self {
        let k = geometry.kernel;
        DeconvParams {
            weight: Tensor::randn(
                Shape::new(in_channels, out_channels, k, k),
                fan_in_std(in_channels, k),
                rng,
            ),
            bias: Tensor::zeros(Shape::new(1, out_channels, 1, 1)),
            geometry,
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> ConvVars {
        ConvVars {
            weight: tape.leaf(self.weight.clone().with_requires_grad(requires_grad)),
            bias: tape.leaf(self.bias.clone().with_requires_grad(requires_grad)),
            geometry: self.geometry,
        }
    }
}

/// Convolution (or transposed convolution) parameters recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
    pub geometry: ConvGeometry,
}

/// Strided cross-correlation with zero padding, plus bias.
pub fn conv2d<T: Real>(tape: &mut Tape<T>, x: Var, p: &ConvVars) -> Result<Var> {
    tape.push_conv(x, p.weight, p.bias, p.geometry)
}

/// Transposed convolution: the adjoint of [`conv2d`] with the same geometry,
/// plus bias.
pub fn deconv2d<T: Real>(tape: &mut Tape<T>, x: Var, p: &ConvVars) -> Result<Var> {
    tape.push_deconv(x, p.weight, p.bias, p.geometry)
}

/// Spatial mean of each feature map, giving shape `(n, c, 1, 1)`.
pub fn global_avg_pool<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    tape.push_global_avg_pool(x)
}
