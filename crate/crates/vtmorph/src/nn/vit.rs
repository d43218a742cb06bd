//! Transformer encoder over a fixed 64-token patch grid.

use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{randn_vec, LayerNorm, Linear, Module};

pub const TOKENS: usize = 64;

#[derive(Debug, Clone, Copy)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub in_channels: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for VitConfig {
    fn default() -> Self {
        VitConfig {
            image_size: 64,
            patch_size: 8,
            in_channels: 2,
            dim: 128,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
        }
    }
}

struct Block<T: Scalar> {
    ln1: LayerNorm<T>,
    wq: Linear<T>,
    wk: Linear<T>,
    wv: Linear<T>,
    wo: Linear<T>,
    ln2: LayerNorm<T>,
    mlp1: Linear<T>,
    mlp2: Linear<T>,
}

/// Patch embedding, learned positional embeddings over exactly 64 token
/// positions, `depth` pre-norm attention blocks, and a mean-pooled output
/// embedding.
pub struct VitEncoder<T: Scalar> {
    cfg: VitConfig,
    embed: Linear<T>,
    pos: Tensor<T>,
    blocks: Vec<Block<T>>,
    ln_out: LayerNorm<T>,
}

impl<T: Scalar> VitEncoder<T> {
    pub fn new(rng: &mut ChaCha8Rng, cfg: VitConfig) -> Self {
        let grid = cfg.image_size / cfg.patch_size;
        assert_eq!(
            cfg.image_size % cfg.patch_size,
            0,
            "vit: image {} not divisible by patch {}",
            cfg.image_size,
            cfg.patch_size
        );
        assert_eq!(
            grid * grid,
            TOKENS,
            "vit: {}x{} image with {}x{} patches yields {} tokens, need exactly {TOKENS}",
            cfg.image_size,
            cfg.image_size,
            cfg.patch_size,
            cfg.patch_size,
            grid * grid
        );
        assert_eq!(cfg.dim % cfg.heads, 0, "vit: dim must divide into heads");

        let patch_dim = cfg.in_channels * cfg.patch_size * cfg.patch_size;
        let embed = Linear::new(rng, patch_dim, cfg.dim);
        let pos = Tensor::param(randn_vec(rng, TOKENS * cfg.dim, 0.02), &[1, TOKENS, cfg.dim]);
        let blocks = (0..cfg.depth)
            .map(|_| Block {
                ln1: LayerNorm::new(cfg.dim),
                wq: Linear::new(rng, cfg.dim, cfg.dim),
                wk: Linear::new(rng, cfg.dim, cfg.dim),
                wv: Linear::new(rng, cfg.dim, cfg.dim),
                wo: Linear::new(rng, cfg.dim, cfg.dim),
                ln2: LayerNorm::new(cfg.dim),
                mlp1: Linear::new(rng, cfg.dim, cfg.dim * cfg.mlp_ratio),
                mlp2: Linear::new(rng, cfg.dim * cfg.mlp_ratio, cfg.dim),
            })
            .collect();

        VitEncoder {
            cfg,
            embed,
            pos,
            blocks,
            ln_out: LayerNorm::new(cfg.dim),
        }
    }

    pub fn config(&self) -> &VitConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    /// N×C×H×W -> N×dim pooled embedding.
    pub fn encode(&self, x: &Tensor<T>) -> Tensor<T> {
        self.encode_with_attention(x).0
    }

    /// Also returns each layer's attention weights as N×heads×T×T, rows
    /// summing to 1.
    pub fn encode_with_attention(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<Tensor<T>>) {
        let s = x.shape();
        assert_eq!(s.len(), 4, "vit: input must be N×C×H×W, got {s:?}");
        assert_eq!(
            (s[1], s[2], s[3]),
            (self.cfg.in_channels, self.cfg.image_size, self.cfg.image_size),
            "vit: expected N×{}×{}×{} input, got {s:?}",
            self.cfg.in_channels,
            self.cfg.image_size,
            self.cfg.image_size
        );
        let n = s[0];
        let d = self.cfg.dim;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());

        let tokens = x.to_patches(self.cfg.patch_size); // N×T×patch_dim
        let mut h = self.embed.forward(&tokens).add(&self.pos); // N×T×D

        let mut attentions = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let normed = block.ln1.forward(&h);
            let q = block.wq.forward(&normed);
            let k = block.wk.forward(&normed);
            let v = block.wv.forward(&normed);

            // per-head attention via last-axis slices
            let mut head_outs = Vec::with_capacity(heads);
            let mut head_attns = Vec::with_capacity(heads);
            for hi in 0..heads {
                let qh = q.slice(2, hi * dh, (hi + 1) * dh); // N×T×dh
                let kh = k.slice(2, hi * dh, (hi + 1) * dh);
                let vh = v.slice(2, hi * dh, (hi + 1) * dh);
                let logits = qh.matmul(&kh.transpose()).mul_scalar(scale); // N×T×T
                let attn = logits.softmax();
                head_outs.push(attn.matmul(&vh)); // N×T×dh
                head_attns.push(attn.reshape(&[n, 1, TOKENS, TOKENS]));
            }
            let heads_refs: Vec<&Tensor<T>> = head_outs.iter().collect();
            let merged = Tensor::concat(&heads_refs, 2); // N×T×D
            let attn_refs: Vec<&Tensor<T>> = head_attns.iter().collect();
            attentions.push(Tensor::concat(&attn_refs, 1)); // N×H×T×T

            h = h.add(&block.wo.forward(&merged));
            let mlp_in = block.ln2.forward(&h);
            let mlp_out = block.mlp2.forward(&block.mlp1.forward(&mlp_in).relu());
            h = h.add(&mlp_out);
        }

        let pooled = self.ln_out.forward(&h).mean_axis(1); // N×D
        (pooled, attentions)
    }
}

impl<T: Scalar> Module<T> for VitEncoder<T> {
    fn params(&self) -> Vec<Tensor<T>> {
        let mut out = self.embed.params();
        out.push(self.pos.clone());
        for b in &self.blocks {
            out.extend(b.ln1.params());
            out.extend(b.wq.params());
            out.extend(b.wk.params());
            out.extend(b.wv.params());
            out.extend(b.wo.params());
            out.extend(b.ln2.params());
            out.extend(b.mlp1.params());
            out.extend(b.mlp2.params());
        }
        out.extend(self.ln_out.params());
        out
    }

    fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.embed.named_params(&format!("{prefix}.embed"), out);
        out.push((format!("{prefix}.pos"), self.pos.clone()));
        for (i, b) in self.blocks.iter().enumerate() {
            b.ln1.named_params(&format!("{prefix}.block{i}.ln1"), out);
            b.wq.named_params(&format!("{prefix}.block{i}.wq"), out);
            b.wk.named_params(&format!("{prefix}.block{i}.wk"), out);
            b.wv.named_params(&format!("{prefix}.block{i}.wv"), out);
            b.wo.named_params(&format!("{prefix}.block{i}.wo"), out);
            b.ln2.named_params(&format!("{prefix}.block{i}.ln2"), out);
            b.mlp1.named_params(&format!("{prefix}.block{i}.mlp1"), out);
            b.mlp2.named_params(&format!("{prefix}.block{i}.mlp2"), out);
        }
        self.ln_out.named_params(&format!("{prefix}.ln_out"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_vit() -> VitEncoder<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        VitEncoder::new(
            &mut rng,
            VitConfig {
                image_size: 16,
                patch_size: 2,
                in_channels: 2,
                dim: 16,
                depth: 2,
                heads: 2,
                mlp_ratio: 2,
            },
        )
    }

    #[test]
    fn sixty_four_tokens_from_16x16_patch_2() {
        let v = tiny_vit();
        let x = Tensor::zeros(&[3, 2, 16, 16]);
        let e = v.encode(&x);
        assert_eq!(e.shape(), &[3, 16]);
    }

    #[test]
    #[should_panic(expected = "need exactly 64")]
    fn wrong_patch_count_rejected_at_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let _ = VitEncoder::<f32>::new(
            &mut rng,
            VitConfig {
                image_size: 16,
                patch_size: 4, // 4x4 grid = 16 tokens
                ..VitConfig::default()
            },
        );
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let v = tiny_vit();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::new(super::super::randn_vec(&mut rng, 2 * 2 * 16 * 16, 1.0), &[2, 2, 16, 16]);
        let (_, attns) = v.encode_with_attention(&x);
        assert_eq!(attns.len(), 2);
        for a in &attns {
            assert_eq!(a.shape(), &[2, 2, TOKENS, TOKENS]);
            let data = a.to_vec();
            for row in data.chunks(TOKENS) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-5, "row sum {s}");
            }
        }
    }

    #[test]
    fn batch_permutation_permutes_embeddings() {
        let v = tiny_vit();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = super::super::randn_vec::<f64>(&mut rng, 2 * 16 * 16, 1.0);
        let b = super::super::randn_vec::<f64>(&mut rng, 2 * 16 * 16, 1.0);
        let mut ab = a.clone();
        ab.extend_from_slice(&b);
        let mut ba = b.clone();
        ba.extend_from_slice(&a);
        let e_ab = v.encode(&Tensor::new(ab, &[2, 2, 16, 16])).to_vec();
        let e_ba = v.encode(&Tensor::new(ba, &[2, 2, 16, 16])).to_vec();
        let d = v.dim();
        for i in 0..d {
            assert!((e_ab[i] - e_ba[d + i]).abs() < 1e-12);
            assert!((e_ab[d + i] - e_ba[i]).abs() < 1e-12);
        }
    }
}
