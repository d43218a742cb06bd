//! Registration and generation quality scoring: morphological-gradient edge
//! maps, SSIM and NCC over them, mutual information, Fréchet feature
//! distance, and a perceptual distance under a pluggable feature extractor.
//! All scores are f64 regardless of image precision.

mod edge;
mod features;
mod frechet;
mod mi;
mod ncc;
mod perceptual;
mod report;
mod ssim;

pub use edge::edge_map;
pub use features::{FeatureExtractor, RandomConvExtractor};
pub use frechet::{frechet_distance, FeatureSet};
pub use mi::{histogram_entropy, mutual_information};
pub use ncc::{ncc, NccScore};
pub use perceptual::perceptual_distance;
pub use report::{evaluate_pairs, Aggregate, MetricReport, PairRow, PairScores};
pub use ssim::ssim;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("shape mismatch: {a:?} vs {b:?}")]
    ShapeMismatch { a: Vec<usize>, b: Vec<usize> },
    #[error("structuring-element radius must be ≥ 1, got {0}")]
    BadRadius(usize),
    #[error("histogram needs at least 2 bins, got {0}")]
    BadBins(usize),
    #[error("image {shape:?} smaller than the {window}×{window} window")]
    WindowTooLarge { shape: Vec<usize>, window: usize },
    #[error("feature dimension mismatch: {a} vs {b}")]
    DimMismatch { a: usize, b: usize },
    #[error("covariance not positive semi-definite after jitter: min eigenvalue {min_eig:e} (max {max_eig:e})")]
    NotPsd { min_eig: f64, max_eig: f64 },
    #[error("feature set needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("unmatched pair files: {}", files.join(", "))]
    UnmatchedPairs { files: Vec<String> },
    #[error("cannot read evaluation directory {0}")]
    BadDir(std::path::PathBuf),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// Knobs for the scoring pipeline; all config-file-exposed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    pub edge_radius: usize,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    pub mi_bins: usize,
    /// Seed of the default feature extractor; stamped into reports.
    pub feature_seed: u64,
    pub feature_dim: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            edge_radius: 1,
            ssim_window: 11,
            ssim_sigma: 1.5,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
            mi_bins: 32,
            feature_seed: 0,
            feature_dim: 192,
        }
    }
}

fn same_shape<T: crate::scalar::Scalar>(
    a: &crate::tensor::Tensor<T>,
    b: &crate::tensor::Tensor<T>,
) -> Result<(), MetricError> {
    if a.shape() != b.shape() {
        return Err(MetricError::ShapeMismatch {
            a: a.shape().to_vec(),
            b: b.shape().to_vec(),
        });
    }
    Ok(())
}
