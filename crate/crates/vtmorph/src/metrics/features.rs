//! Pluggable feature extraction for distribution-level metrics.
//!
//! No pretrained backbone ships here; the default extractor is a fixed
//! seeded random-weight conv stack, so scores are deterministic and
//! self-consistent but NOT comparable to scores computed with pretrained
//! networks. Reports stamp the extractor description for that reason.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::randn_vec;
use crate::scalar::Scalar;
use crate::tensor::{no_grad, Tensor};

/// Deterministic map from a grayscale image to layered feature maps and a
/// fixed-length embedding.
pub trait FeatureExtractor<T: Scalar> {
    /// Per-layer activation maps (C×H×W each) for perceptual comparison.
    fn feature_maps(&self, img: &Tensor<T>) -> Vec<Tensor<T>>;
    /// Fixed-length embedding for distribution metrics.
    fn embed(&self, img: &Tensor<T>) -> Vec<f64>;
    fn dim(&self) -> usize;
    /// Human-readable identity including the seed, stamped into reports.
    fn describe(&self) -> String;
}

/// Four stride-2 conv+ReLU layers with seeded Gaussian weights, global
/// average pool at the end.
pub struct RandomConvExtractor<T: Scalar> {
    weights: Vec<Tensor<T>>,
    biases: Vec<Tensor<T>>,
    seed: u64,
    dim: usize,
}

impl<T: Scalar> RandomConvExtractor<T> {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim >= 8 && dim % 8 == 0, "extractor dim must be a multiple of 8, ≥ 8");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = [1, dim / 8, dim / 4, dim / 2, dim];
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for i in 0..4 {
            let (cin, cout) = (channels[i], channels[i + 1]);
            let std = (2.0 / (cin * 9) as f64).sqrt(); // He init keeps ReLU activations alive
            weights.push(Tensor::new(randn_vec(&mut rng, cout * cin * 9, std), &[cout, cin, 3, 3]));
            biases.push(Tensor::new(vec![T::zero(); cout], &[1, cout, 1, 1]));
        }
        RandomConvExtractor {
            weights,
            biases,
            seed,
            dim,
        }
    }

    fn forward_layers(&self, img: &Tensor<T>) -> Vec<Tensor<T>> {
        let s = img.shape();
        assert_eq!(s.len(), 2, "extractor: image must be H×W, got {s:?}");
        let mut h = img.reshape(&[1, 1, s[0], s[1]]);
        let mut maps = Vec::with_capacity(4);
        no_grad(|| {
            for (w, b) in self.weights.iter().zip(&self.biases) {
                h = h.conv2d(w, 2, 1).add(b).relu();
                maps.push(h.clone());
            }
        });
        maps
    }
}

impl<T: Scalar> FeatureExtractor<T> for RandomConvExtractor<T> {
    fn feature_maps(&self, img: &Tensor<T>) -> Vec<Tensor<T>> {
        self.forward_layers(img)
    }

    fn embed(&self, img: &Tensor<T>) -> Vec<f64> {
        let maps = self.forward_layers(img);
        let last = maps.last().unwrap();
        let s = last.shape(); // 1×dim×h×w
        let (c, hw) = (s[1], s[2] * s[3]);
        let data = last.data();
        (0..c)
            .map(|ci| {
                data[ci * hw..(ci + 1) * hw]
                    .iter()
                    .map(|v| v.as_f64())
                    .sum::<f64>()
                    / hw as f64
            })
            .collect()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn describe(&self) -> String {
        format!("random-conv(seed={}, dim={})", self.seed, self.dim)
    }
}
