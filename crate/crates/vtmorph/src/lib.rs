//! Unsupervised visible–thermal image registration.
//!
//! Two conditional translation networks cast images across spectra, a
//! spatial transformer predicts the affine parameters that align a thermal
//! image to its visible pair, and a metric suite (edge-map SSIM/NCC, mutual
//! information, Fréchet feature distance, a perceptual proxy) scores
//! alignment before and after. Everything runs on a small reverse-mode
//! autodiff engine generic over the scalar type: `f32` for training, `f64`
//! for finite-difference verification.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod stn;
pub mod train;
pub mod tensor;

pub use scalar::Scalar;
pub use tensor::Tensor;

/// Training-precision tensor.
pub type Tensor32 = Tensor<f32>;
/// Verification-precision tensor.
pub type Tensor64 = Tensor<f64>;
/// Training-precision affine parameters.
pub type Affine32 = stn::AffineParams<f32>;
/// Verification-precision affine parameters.
pub type Affine64 = stn::AffineParams<f64>;
