//! Affine parameter regressor: five Linear-ReLU blocks and an output layer
//! initialized to emit the identity transform.

use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::stn::AffineParams;
use crate::tensor::Tensor;

use super::{Linear, Module};

pub const BLOCKS: usize = 5;

pub struct AffineRegressor<T: Scalar> {
    blocks: Vec<Linear<T>>,
    head: Linear<T>,
}

impl<T: Scalar> AffineRegressor<T> {
    /// `hidden` holds the output width of each of the five blocks. The head
    /// starts at zero weights with the identity transform as bias, so the
    /// regressor predicts the identity for any embedding until trained.
    pub fn new(rng: &mut ChaCha8Rng, input_dim: usize, hidden: &[usize]) -> Self {
        assert_eq!(
            hidden.len(),
            BLOCKS,
            "regressor: exactly {BLOCKS} Linear-ReLU blocks required, got {}",
            hidden.len()
        );
        let mut blocks = Vec::with_capacity(BLOCKS);
        let mut d = input_dim;
        for &width in hidden {
            blocks.push(Linear::new(rng, d, width));
            d = width;
        }
        let head = Linear::constant_output(
            d,
            AffineParams::<T>::identity().to_array().to_vec(),
        );
        AffineRegressor { blocks, head }
    }

    pub fn default_hidden() -> [usize; BLOCKS] {
        [128, 64, 64, 32, 32]
    }

    /// N×D embedding -> N×6 parameters in [a, b, tx, c, d, ty] order.
    pub fn forward(&self, embedding: &Tensor<T>) -> Tensor<T> {
        let mut h = embedding.clone();
        for block in &self.blocks {
            h = block.forward(&h).relu();
        }
        self.head.forward(&h)
    }
}

impl<T: Scalar> Module<T> for AffineRegressor<T> {
    fn params(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.params());
        }
        out.extend(self.head.params());
        out
    }

    fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.named_params(&format!("{prefix}.block{i}"), out);
        }
        self.head.named_params(&format!("{prefix}.head"), out);
    }
}
