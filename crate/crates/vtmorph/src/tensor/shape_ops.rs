//! Shape manipulation and reductions: reshape, concat, slice, sum, mean,
//! patch extraction for the transformer front end.

use crate::scalar::Scalar;

use super::{numel, Tensor};

/// View a shape as (outer, axis, inner) blocks around one axis.
fn axis_blocks(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tensor<T> {
    pub fn reshape(&self, new_shape: &[usize]) -> Tensor<T> {
        assert_eq!(
            numel(new_shape),
            self.numel(),
            "reshape: cannot view shape {:?} as {:?}",
            self.shape(),
            new_shape
        );
        let old_shape = self.shape().to_vec();
        let _ = &old_shape;
        Tensor::from_op(
            self.to_vec(),
            new_shape.to_vec(),
            vec![self.clone()],
            move |g| vec![Some(g.to_vec())],
        )
    }

    /// Concatenate along `axis`. All other extents must match.
    pub fn concat(tensors: &[&Tensor<T>], axis: usize) -> Tensor<T> {
        assert!(!tensors.is_empty(), "concat: no tensors");
        let first = tensors[0].shape().to_vec();
        assert!(axis < first.len(), "concat: axis {axis} out of range for {first:?}");
        let mut axis_total = 0;
        for t in tensors {
            let s = t.shape();
            assert_eq!(s.len(), first.len(), "concat: rank mismatch {s:?} vs {first:?}");
            for (d, (&a, &b)) in s.iter().zip(&first).enumerate() {
                assert!(
                    d == axis || a == b,
                    "concat: shapes {s:?} and {first:?} differ outside axis {axis}"
                );
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;

        let (outer, _, inner) = axis_blocks(&out_shape, axis);
        let mut out = vec![T::zero(); numel(&out_shape)];
        let sizes: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let mut offset = 0;
        for (t, &sz) in tensors.iter().zip(&sizes) {
            let data = t.data();
            for o in 0..outer {
                let dst = o * axis_total * inner + offset * inner;
                let src = o * sz * inner;
                out[dst..dst + sz * inner].copy_from_slice(&data[src..src + sz * inner]);
            }
            offset += sz;
        }

        let parents: Vec<Tensor<T>> = tensors.iter().map(|t| (*t).clone()).collect();
        Tensor::from_op(out, out_shape, parents, move |g| {
            let mut grads = Vec::with_capacity(sizes.len());
            let mut offset = 0;
            for &sz in &sizes {
                let mut gi = vec![T::zero(); outer * sz * inner];
                for o in 0..outer {
                    let src = o * axis_total * inner + offset * inner;
                    let dst = o * sz * inner;
                    gi[dst..dst + sz * inner].copy_from_slice(&g[src..src + sz * inner]);
                }
                grads.push(Some(gi));
                offset += sz;
            }
            grads
        })
    }

    /// Contiguous range along one axis: [start, end).
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Tensor<T> {
        let shape = self.shape().to_vec();
        assert!(axis < shape.len(), "slice: axis {axis} out of range for {shape:?}");
        assert!(
            start < end && end <= shape[axis],
            "slice: range {start}..{end} invalid for axis {axis} of {shape:?}"
        );
        let (outer, axis_len, inner) = axis_blocks(&shape, axis);
        let span = end - start;
        let mut out_shape = shape.clone();
        out_shape[axis] = span;

        let data = self.data();
        let mut out = vec![T::zero(); outer * span * inner];
        for o in 0..outer {
            let src = o * axis_len * inner + start * inner;
            let dst = o * span * inner;
            out[dst..dst + span * inner].copy_from_slice(&data[src..src + span * inner]);
        }
        drop(data);

        Tensor::from_op(out, out_shape, vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); outer * axis_len * inner];
            for o in 0..outer {
                let dst = o * axis_len * inner + start * inner;
                let src = o * span * inner;
                gx[dst..dst + span * inner].copy_from_slice(&g[src..src + span * inner]);
            }
            vec![Some(gx)]
        })
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(vec![total], vec![1], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    /// Mean of all elements, as a scalar tensor.
    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        let scale = T::one() / T::from_usize(n);
        let total: T = self.data().iter().copied().sum();
        Tensor::from_op(vec![total * scale], vec![1], vec![self.clone()], move |g| {
            vec![Some(vec![g[0] * scale; n])]
        })
    }

    /// Sum over one axis (the axis is removed).
    pub fn sum_axis(&self, axis: usize) -> Tensor<T> {
        let shape = self.shape().to_vec();
        assert!(axis < shape.len(), "sum_axis: axis {axis} out of range for {shape:?}");
        let (outer, axis_len, inner) = axis_blocks(&shape, axis);
        let data = self.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..axis_len {
                let base = (o * axis_len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += data[base + i];
                }
            }
        }
        drop(data);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }

        Tensor::from_op(out, out_shape, vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); outer * axis_len * inner];
            for o in 0..outer {
                for a in 0..axis_len {
                    let base = (o * axis_len + a) * inner;
                    for i in 0..inner {
                        gx[base + i] = g[o * inner + i];
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    /// Mean over one axis (the axis is removed).
    pub fn mean_axis(&self, axis: usize) -> Tensor<T> {
        let scale = T::one() / T::from_usize(self.shape()[axis]);
        self.sum_axis(axis).mul_scalar(scale)
    }

    /// Rearrange N×C×H×W into N×(HW/p²)×(C·p·p) patch tokens, row-major over
    /// the patch grid, channel-major within a token.
    pub fn to_patches(&self, patch: usize) -> Tensor<T> {
        let shape = self.shape().to_vec();
        assert_eq!(shape.len(), 4, "to_patches: expected N×C×H×W, got {shape:?}");
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        assert!(
            patch > 0 && h % patch == 0 && w % patch == 0,
            "to_patches: {h}x{w} not divisible by patch size {patch}"
        );
        let (gh, gw) = (h / patch, w / patch);
        let tokens = gh * gw;
        let dim = c * patch * patch;

        let data = self.data();
        let mut out = vec![T::zero(); n * tokens * dim];
        for ni in 0..n {
            for ty in 0..gh {
                for tx in 0..gw {
                    let tok = ty * gw + tx;
                    for ci in 0..c {
                        for py in 0..patch {
                            for px in 0..patch {
                                let src = ((ni * c + ci) * h + ty * patch + py) * w
                                    + tx * patch
                                    + px;
                                let dst = (ni * tokens + tok) * dim
                                    + (ci * patch + py) * patch
                                    + px;
                                out[dst] = data[src];
                            }
                        }
                    }
                }
            }
        }
        drop(data);

        Tensor::from_op(
            out,
            vec![n, tokens, dim],
            vec![self.clone()],
            move |g| {
                let mut gx = vec![T::zero(); n * c * h * w];
                for ni in 0..n {
                    for ty in 0..gh {
                        for tx in 0..gw {
                            let tok = ty * gw + tx;
                            for ci in 0..c {
                                for py in 0..patch {
                                    for px in 0..patch {
                                        let dst = ((ni * c + ci) * h + ty * patch + py) * w
                                            + tx * patch
                                            + px;
                                        let src = (ni * tokens + tok) * dim
                                            + (ci * patch + py) * patch
                                            + px;
                                        gx[dst] = g[src];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![Some(gx)]
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_channels() {
        let a = Tensor::new(vec![1.0f64, 2.0], &[1, 1, 1, 2]);
        let b = Tensor::new(vec![3.0f64, 4.0], &[1, 1, 1, 2]);
        let c = Tensor::concat(&[&a, &b], 1);
        assert_eq!(c.shape(), &[1, 2, 1, 2]);
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn concat_backward_splits() {
        let a = Tensor::param(vec![1.0f64, 2.0], &[2, 1]);
        let b = Tensor::param(vec![3.0f64], &[1, 1]);
        let c = Tensor::concat(&[&a, &b], 0);
        c.mul(&c).sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![2.0, 4.0]);
        assert_eq!(b.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn slice_middle_axis() {
        let x = Tensor::new((0..24).map(|v| v as f64).collect(), &[2, 3, 4]);
        let s = x.slice(1, 1, 3);
        assert_eq!(s.shape(), &[2, 2, 4]);
        assert_eq!(s.to_vec()[..4], [4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn sum_axis_and_mean_axis() {
        let x = Tensor::new(vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        assert_eq!(x.sum_axis(0).to_vec(), vec![5.0, 7.0, 9.0]);
        assert_eq!(x.sum_axis(1).to_vec(), vec![6.0, 15.0]);
        assert_eq!(x.mean_axis(1).to_vec(), vec![2.0, 5.0]);
    }

    #[test]
    fn patches_square_count_and_round_trip_grad() {
        // 1×1×4×4 with patch 2 -> 4 tokens of dim 4
        let x = Tensor::param((0..16).map(|v| v as f64).collect(), &[1, 1, 4, 4]);
        let p = x.to_patches(2);
        assert_eq!(p.shape(), &[1, 4, 4]);
        // token 0 is the top-left 2x2 block
        assert_eq!(p.to_vec()[..4], [0.0, 1.0, 4.0, 5.0]);
        p.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 16]);
    }

    #[test]
    fn mean_matches_sum_over_n() {
        let x = Tensor::new(vec![2.0f32, 4.0, 6.0], &[3]);
        assert!((x.mean().item() - 4.0).abs() < 1e-6);
    }
}
