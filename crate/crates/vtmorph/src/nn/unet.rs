//! Encoder–decoder generator with skip connections.

use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Conv2d, ConvTranspose2d, InstanceNorm, Module};

struct EncStage<T: Scalar> {
    conv: Conv2d<T>,
    norm: Option<InstanceNorm<T>>,
}

struct DecStage<T: Scalar> {
    tconv: ConvTranspose2d<T>,
    norm: Option<InstanceNorm<T>>,
}

/// Image-to-image generator: `stages` stride-2 conv encoder stages mirrored
/// by transposed-conv decoder stages with skip concatenations, tanh output.
/// Output spatial shape equals input; one output channel.
pub struct UnetGenerator<T: Scalar> {
    enc: Vec<EncStage<T>>,
    dec: Vec<DecStage<T>>,
    image_size: usize,
    in_channels: usize,
}

impl<T: Scalar> UnetGenerator<T> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        image_size: usize,
        in_channels: usize,
        stages: usize,
        base_width: usize,
    ) -> Self {
        assert!(stages >= 2, "generator needs at least 2 stages");
        assert!(
            image_size >= 32 && image_size.is_power_of_two(),
            "generator: image size must be a power of two ≥ 32, got {image_size}"
        );
        assert!(
            image_size % (1 << stages) == 0,
            "generator: image size {image_size} not divisible by 2^{stages}"
        );

        let width = |i: usize| base_width << i;
        let mut enc = Vec::with_capacity(stages);
        for i in 0..stages {
            let cin = if i == 0 { in_channels } else { width(i - 1) };
            enc.push(EncStage {
                conv: Conv2d::new(rng, cin, width(i), 4, 2, 1),
                // first stage carries no normalization
                norm: (i > 0).then(|| InstanceNorm::new(width(i))),
            });
        }

        let mut dec = Vec::with_capacity(stages);
        for i in 0..stages {
            let level = stages - 1 - i; // spatial level being restored
            let cin = if i == 0 {
                width(stages - 1)
            } else {
                // previous decoder output concatenated with the skip
                2 * width(level)
            };
            let last = i == stages - 1;
            let cout = if last { 1 } else { width(level - 1) };
            dec.push(DecStage {
                tconv: ConvTranspose2d::new(rng, cin, cout, 4, 2, 1),
                norm: (!last).then(|| InstanceNorm::new(cout)),
            });
        }

        UnetGenerator {
            enc,
            dec,
            image_size,
            in_channels,
        }
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    /// Zero the output layer: the generator then emits exactly 0 (tanh of 0)
    /// for any input.
    pub fn zero_final_layer(&self) {
        self.dec.last().unwrap().tconv.zero_init();
    }

    /// N×C×H×W in [-1, 1] -> N×1×H×W in [-1, 1].
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let s = x.shape();
        assert_eq!(s.len(), 4, "generator: input must be N×C×H×W, got {s:?}");
        assert_eq!(
            (s[1], s[2], s[3]),
            (self.in_channels, self.image_size, self.image_size),
            "generator: expected N×{}×{}×{} input, got {s:?}",
            self.in_channels,
            self.image_size,
            self.image_size
        );

        let mut skips: Vec<Tensor<T>> = Vec::with_capacity(self.enc.len());
        let mut h = x.clone();
        for stage in &self.enc {
            let mut y = stage.conv.forward(&h);
            if let Some(norm) = &stage.norm {
                y = norm.forward(&y);
            }
            h = y.leaky_relu(0.2);
            skips.push(h.clone());
        }

        for (i, stage) in self.dec.iter().enumerate() {
            let input = if i == 0 {
                h.clone()
            } else {
                // concat with the encoder output at the matching resolution
                let skip = &skips[self.enc.len() - 1 - i];
                Tensor::concat(&[&h, skip], 1)
            };
            let y = stage.tconv.forward(&input);
            h = match &stage.norm {
                Some(norm) => norm.forward(&y).relu(),
                None => y.tanh(),
            };
        }
        h
    }
}

impl<T: Scalar> Module<T> for UnetGenerator<T> {
    fn params(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        for e in &self.enc {
            out.extend(e.conv.params());
            if let Some(n) = &e.norm {
                out.extend(n.params());
            }
        }
        for d in &self.dec {
            out.extend(d.tconv.params());
            if let Some(n) = &d.norm {
                out.extend(n.params());
            }
        }
        out
    }

    fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (i, e) in self.enc.iter().enumerate() {
            e.conv.named_params(&format!("{prefix}.enc{i}.conv"), out);
            if let Some(n) = &e.norm {
                n.named_params(&format!("{prefix}.enc{i}.norm"), out);
            }
        }
        for (i, d) in self.dec.iter().enumerate() {
            d.tconv.named_params(&format!("{prefix}.dec{i}.tconv"), out);
            if let Some(n) = &d.norm {
                n.named_params(&format!("{prefix}.dec{i}.norm"), out);
            }
        }
    }
}
