//! Network building blocks and the four architectures: two translation
//! generators, their patch discriminators, the transformer encoder, and the
//! affine regressor.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

mod disc;
mod regressor;
mod unet;
mod vit;

pub use disc::PatchDiscriminator;
pub use regressor::AffineRegressor;
pub use unet::UnetGenerator;
pub use vit::{VitConfig, VitEncoder};

/// Gaussian samples drawn in f64 so f32 and f64 models see the same stream.
pub fn randn_vec<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<T> {
    (0..n)
        .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal) * std))
        .collect()
}

/// Anything holding trainable tensors.
pub trait Module<T: Scalar> {
    /// Parameter handles in a stable order.
    fn params(&self) -> Vec<Tensor<T>>;
    /// (name, tensor) pairs with a dotted prefix, for checkpoints.
    fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>);

    fn param_count(&self) -> usize {
        self.params().iter().map(Tensor::numel).sum()
    }
}

const INIT_STD: f64 = 0.02;

/// Fully connected layer; weights stored in×out so forward is x·W + b.
pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: Tensor::param(randn_vec(rng, d_in * d_out, INIT_STD), &[d_in, d_out]),
            bias: Tensor::param(vec![T::zero(); d_out], &[d_out]),
        }
    }

    /// Zero weights with an explicit bias: the output is `bias` for any input.
    pub fn constant_output(d_in: usize, bias: Vec<T>) -> Self {
        let d_out = bias.len();
        Linear {
            weight: Tensor::param(vec![T::zero(); d_in * d_out], &[d_in, d_out]),
            bias: Tensor::param(bias, &[d_out]),
        }
    }

    /// x: (..., d_in) -> (..., d_out); leading axes are flattened and restored.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let shape = x.shape().to_vec();
        let d_in = self.weight.shape()[0];
        let d_out = self.weight.shape()[1];
        assert_eq!(
            *shape.last().unwrap(),
            d_in,
            "linear: input {:?} does not end in width {d_in}",
            shape
        );
        let rows = x.numel() / d_in;
        let flat = x.reshape(&[rows, d_in]);
        let y = flat.matmul(&self.weight).add(&self.bias);
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = d_out;
        y.reshape(&out_shape)
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn params(&self) -> Vec<Tensor<T>> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Strided convolution with per-channel bias.
pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>, // cout×cin×k×k
    pub bias: Tensor<T>,   // broadcast as 1×cout×1×1
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv2d {
            weight: Tensor::param(randn_vec(rng, cout * cin * k * k, INIT_STD), &[cout, cin, k, k]),
            bias: Tensor::param(vec![T::zero(); cout], &[1, cout, 1, 1]),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.conv2d(&self.weight, self.stride, self.pad).add(&self.bias)
    }

    pub fn zero_init(&self) {
        self.weight.set_data(vec![T::zero(); self.weight.numel()]);
        self.bias.set_data(vec![T::zero(); self.bias.numel()]);
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn params(&self) -> Vec<Tensor<T>> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Strided transposed convolution with per-channel bias.
pub struct ConvTranspose2d<T: Scalar> {
    pub weight: Tensor<T>, // cin×cout×k×k
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        ConvTranspose2d {
            weight: Tensor::param(randn_vec(rng, cin * cout * k * k, INIT_STD), &[cin, cout, k, k]),
            bias: Tensor::param(vec![T::zero(); cout], &[1, cout, 1, 1]),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.conv_transpose2d(&self.weight, self.stride, self.pad)
            .add(&self.bias)
    }

    pub fn zero_init(&self) {
        self.weight.set_data(vec![T::zero(); self.weight.numel()]);
        self.bias.set_data(vec![T::zero(); self.bias.numel()]);
    }
}

impl<T: Scalar> Module<T> for ConvTranspose2d<T> {
    fn params(&self) -> Vec<Tensor<T>> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Per-channel gain and bias for instance normalization.
pub struct InstanceNorm<T: Scalar> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> InstanceNorm<T> {
    pub fn new(channels: usize) -> Self {
        InstanceNorm {
            gain: Tensor::param(vec![T::one(); channels], &[channels]),
            bias: Tensor::param(vec![T::zero(); channels], &[channels]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.instance_norm(&self.gain, &self.bias, 1e-5)
    }
}

impl<T: Scalar> Module<T> for InstanceNorm<T> {
    fn params(&self) -> Vec<Tensor<T>> {
        vec![self.gain.clone(), self.bias.clone()]
    }

    fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.gain"), self.gain.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Per-feature gain and bias for layer normalization.
pub struct LayerNorm<T: Scalar> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Tensor::param(vec![T::one(); dim], &[dim]),
            bias: Tensor::param(vec![T::zero(); dim], &[dim]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.layer_norm(&self.gain, &self.bias, 1e-5)
    }
}

impl<T: Scalar> Module<T> for LayerNorm<T> {
    fn params(&self) -> Vec<Tensor<T>> {
        vec![self.gain.clone(), self.bias.clone()]
    }

    fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.gain"), self.gain.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}
