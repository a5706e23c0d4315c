//! Dense double-precision tensors laid out row-major as (channel, row, column).
//!
//! Forward kernels in [`kernels`] are shared between the inference path
//! (plain functions on [`FeatureMap`]) and the recording [`Tape`], so both
//! paths produce bitwise-identical values.

pub mod gradcheck;
pub mod kernels;
pub mod tape;

pub use gradcheck::grad_check;
pub use tape::{Gradients, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// A rank-3 array of shape `channels × height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature map value at index {i}")));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self { channels, height, width, data: vec![value; channels * height * width] }
    }

    /// Builds a map where every location carries the same channel vector.
    pub fn broadcast(vector: &[f64], height: usize, width: usize) -> Self {
        let plane = height * width;
        let mut data = Vec::with_capacity(vector.len() * plane);
        for &v in vector {
            data.extend(std::iter::repeat_n(v, plane));
        }
        Self { channels: vector.len(), height, width, data }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { channels, height, width, data }
    }

    pub(crate) fn from_raw(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    /// The channel vector stored at one spatial location.
    pub fn column(&self, y: usize, x: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.at(c, y, x)).collect()
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.shape() == other.shape()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        Self::from_raw(self.channels, self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        pointwise(self, other, Pointwise::Add)
    }

    pub fn sub(&self, other: &FeatureMap) -> Result<FeatureMap> {
        pointwise(self, other, Pointwise::Sub)
    }

    pub fn scale(&self, factor: f64) -> FeatureMap {
        self.map(|v| v * factor)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Stacks `self` on top of `other` along the channel axis.
    pub fn concat_channels(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} with {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self::from_raw(self.channels + other.channels, self.height, self.width, data))
    }
}

/// Element-wise binary operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pointwise {
    Add,
    Sub,
    Mul,
}

pub fn pointwise(a: &FeatureMap, b: &FeatureMap, op: Pointwise) -> Result<FeatureMap> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!("pointwise {:?} on {:?} and {:?}", op, a.shape(), b.shape())));
    }
    let data = match op {
        Pointwise::Add => a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
        Pointwise::Sub => a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect(),
        Pointwise::Mul => a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    };
    Ok(FeatureMap::from_raw(a.channels, a.height, a.width, data))
}

/// A stride-1, size-preserving 2-D convolution (`k` ∈ {1, 3}, padding `k / 2`).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    out_channels: usize,
    in_channels: usize,
    kernel_size: usize,
    kernel: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvLayer {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        kernel: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if kernel_size != 1 && kernel_size != 3 {
            return Err(Error::Invalid(format!("kernel size must be 1 or 3, got {kernel_size}")));
        }
        let expected = out_channels * in_channels * kernel_size * kernel_size;
        if kernel.len() != expected {
            return Err(Error::Shape(format!("kernel needs {expected} values, got {}", kernel.len())));
        }
        if bias.len() != out_channels {
            return Err(Error::Shape(format!("bias needs {out_channels} values, got {}", bias.len())));
        }
        if kernel.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("convolution parameters".into()));
        }
        Ok(Self { out_channels, in_channels, kernel_size, kernel, bias })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel_size: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel_size,
            kernel: vec![0.0; out_channels * in_channels * kernel_size * kernel_size],
            bias: vec![0.0; out_channels],
        }
    }

    /// 1×1 layer that copies its input.
    pub fn identity(channels: usize) -> Self {
        let mut layer = Self::zeros(channels, channels, 1);
        for c in 0..channels {
            layer.kernel[c * channels + c] = 1.0;
        }
        layer
    }

    /// Weights drawn from N(0, gain² / fan_in), zero bias.
    pub fn random(
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        gain: f64,
        rng: &mut impl rand::Rng,
    ) -> Self {
        use rand_distr::{Distribution, Normal};
        let fan_in = (in_channels * kernel_size * kernel_size) as f64;
        let normal = Normal::new(0.0, gain / fan_in.sqrt()).expect("positive std");
        let n = out_channels * in_channels * kernel_size * kernel_size;
        let kernel = (0..n).map(|_| normal.sample(rng)).collect();
        Self { out_channels, in_channels, kernel_size, kernel, bias: vec![0.0; out_channels] }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn stride(&self) -> usize {
        1
    }

    pub fn padding(&self) -> usize {
        self.kernel_size / 2
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn kernel_mut(&mut self) -> &mut [f64] {
        &mut self.kernel
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_size, self.kernel_size]
    }
}

pub fn conv2d(input: &FeatureMap, layer: &ConvLayer) -> Result<FeatureMap> {
    if input.channels != layer.in_channels {
        return Err(Error::Shape(format!(
            "conv2d expects {} input channels, got {}",
            layer.in_channels, input.channels
        )));
    }
    let mut out = vec![0.0; layer.out_channels * input.height * input.width];
    kernels::conv2d_forward(
        &input.data,
        input.channels,
        input.height,
        input.width,
        &layer.kernel,
        &layer.bias,
        layer.out_channels,
        layer.kernel_size,
        &mut out,
    );
    Ok(FeatureMap::from_raw(layer.out_channels, input.height, input.width, out))
}

pub fn sigmoid(x: f64) -> f64 {
    kernels::sigmoid(x)
}
