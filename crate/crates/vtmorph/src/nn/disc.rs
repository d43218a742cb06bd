//! Patch discriminator: a stack of stride-2 convolutions ending in a
//! spatial logit map, one logit per overlapping receptive patch.

use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Conv2d, InstanceNorm, Module};

pub struct PatchDiscriminator<T: Scalar> {
    layers: Vec<(Conv2d<T>, Option<InstanceNorm<T>>)>,
    head: Conv2d<T>,
    depth: usize,
}

impl<T: Scalar> PatchDiscriminator<T> {
    /// Conditional discriminator over channel-stacked (condition, candidate)
    /// pairs: `depth` stride-2 layers then a 1-channel head.
    pub fn new(rng: &mut ChaCha8Rng, in_channels: usize, depth: usize, base_width: usize) -> Self {
        assert!(depth >= 1, "discriminator needs at least one layer");
        let mut layers = Vec::with_capacity(depth);
        for i in 0..depth {
            let cin = if i == 0 { in_channels } else { base_width << (i - 1) };
            let cout = base_width << i;
            layers.push((
                Conv2d::new(rng, cin, cout, 4, 2, 1),
                (i > 0).then(|| InstanceNorm::new(cout)),
            ));
        }
        let head = Conv2d::new(rng, base_width << (depth - 1), 1, 3, 1, 1);
        PatchDiscriminator { layers, head, depth }
    }

    /// How much each spatial axis shrinks: 2^depth.
    pub fn downscale(&self) -> usize {
        1 << self.depth
    }

    /// (condition, candidate) -> N×1×(H/2^d)×(W/2^d) logit map.
    pub fn forward(&self, condition: &Tensor<T>, candidate: &Tensor<T>) -> Tensor<T> {
        assert_eq!(
            condition.shape(),
            candidate.shape(),
            "discriminator: condition {:?} and candidate {:?} must match",
            condition.shape(),
            candidate.shape()
        );
        let mut h = Tensor::concat(&[condition, candidate], 1);
        for (conv, norm) in &self.layers {
            let mut y = conv.forward(&h);
            if let Some(n) = norm {
                y = n.forward(&y);
            }
            h = y.leaky_relu(0.2);
        }
        self.head.forward(&h)
    }
}

impl<T: Scalar> Module<T> for PatchDiscriminator<T> {
    fn params(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        for (conv, norm) in &self.layers {
            out.extend(conv.params());
            if let Some(n) = norm {
                out.extend(n.params());
            }
        }
        out.extend(self.head.params());
        out
    }

    fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (i, (conv, norm)) in self.layers.iter().enumerate() {
            conv.named_params(&format!("{prefix}.layer{i}.conv"), out);
            if let Some(n) = norm {
                n.named_params(&format!("{prefix}.layer{i}.norm"), out);
            }
        }
        self.head.named_params(&format!("{prefix}.head"), out);
    }
}
