//! Softmax and normalization layers.

use crate::scalar::Scalar;

use super::Tensor;

/// Shared normalization backward for one group of `m` values:
/// dx = (dxh − mean(dxh) − xh·mean(dxh⊙xh)) / σ
fn norm_group_backward<T: Scalar>(dxh: &[T], xh: &[T], inv_sigma: T, dx: &mut [T]) {
    let m = T::from_usize(dxh.len());
    let mut mean_dxh = T::zero();
    let mut mean_dxh_xh = T::zero();
    for (&d, &h) in dxh.iter().zip(xh) {
        mean_dxh += d;
        mean_dxh_xh += d * h;
    }
    mean_dxh = mean_dxh / m;
    mean_dxh_xh = mean_dxh_xh / m;
    for i in 0..dxh.len() {
        dx[i] = (dxh[i] - mean_dxh - xh[i] * mean_dxh_xh) * inv_sigma;
    }
}

impl<T: Scalar> Tensor<T> {
    /// Softmax over the last axis.
    pub fn softmax(&self) -> Tensor<T> {
        let shape = self.shape().to_vec();
        let d = *shape.last().expect("softmax: zero-rank tensor");
        let rows = self.numel() / d;
        let x = self.to_vec();
        let mut out = vec![T::zero(); x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in &mut out[r * d..(r + 1) * d] {
                *o = *o / sum;
            }
        }
        let y = out.clone();
        Tensor::from_op(out, shape, vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); g.len()];
            for r in 0..rows {
                let ys = &y[r * d..(r + 1) * d];
                let gs = &g[r * d..(r + 1) * d];
                let dot: T = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
                for i in 0..d {
                    gx[r * d + i] = ys[i] * (gs[i] - dot);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Layer normalization over the last axis with per-feature gain and bias.
    pub fn layer_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>, eps: f64) -> Tensor<T> {
        let shape = self.shape().to_vec();
        let d = *shape.last().expect("layer_norm: zero-rank tensor");
        assert_eq!(gain.shape(), &[d], "layer_norm: gain must be [{d}], got {:?}", gain.shape());
        assert_eq!(bias.shape(), &[d], "layer_norm: bias must be [{d}], got {:?}", bias.shape());
        let rows = self.numel() / d;
        let epst = T::from_f64(eps);

        let x = self.to_vec();
        let gm = gain.to_vec();
        let bt = bias.to_vec();
        let mut out = vec![T::zero(); x.len()];
        let mut xh = vec![T::zero(); x.len()];
        let mut inv_sigma = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let m = T::from_usize(d);
            let mu = row.iter().copied().sum::<T>() / m;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / m;
            let s = T::one() / (var + epst).sqrt();
            inv_sigma[r] = s;
            for i in 0..d {
                let h = (row[i] - mu) * s;
                xh[r * d + i] = h;
                out[r * d + i] = h * gm[i] + bt[i];
            }
        }

        Tensor::from_op(
            out,
            shape,
            vec![self.clone(), gain.clone(), bias.clone()],
            move |g| {
                let mut gx = vec![T::zero(); g.len()];
                let mut ggain = vec![T::zero(); d];
                let mut gbias = vec![T::zero(); d];
                let mut dxh = vec![T::zero(); d];
                for r in 0..rows {
                    let gs = &g[r * d..(r + 1) * d];
                    let hs = &xh[r * d..(r + 1) * d];
                    for i in 0..d {
                        ggain[i] += gs[i] * hs[i];
                        gbias[i] += gs[i];
                        dxh[i] = gs[i] * gm[i];
                    }
                    norm_group_backward(&dxh, hs, inv_sigma[r], &mut gx[r * d..(r + 1) * d]);
                }
                vec![Some(gx), Some(ggain), Some(gbias)]
            },
        )
    }

    /// Instance normalization: N×C×H×W normalized per (n, c) over the spatial
    /// extent, with per-channel gain and bias.
    pub fn instance_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>, eps: f64) -> Tensor<T> {
        let shape = self.shape().to_vec();
        assert_eq!(shape.len(), 4, "instance_norm: input must be N×C×H×W, got {shape:?}");
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        assert_eq!(gain.shape(), &[c], "instance_norm: gain must be [{c}], got {:?}", gain.shape());
        assert_eq!(bias.shape(), &[c], "instance_norm: bias must be [{c}], got {:?}", bias.shape());
        let m = h * w;
        assert!(m > 1, "instance_norm: spatial extent must exceed 1");
        let epst = T::from_f64(eps);

        let x = self.to_vec();
        let gm = gain.to_vec();
        let bt = bias.to_vec();
        let groups = n * c;
        let mut out = vec![T::zero(); x.len()];
        let mut xh = vec![T::zero(); x.len()];
        let mut inv_sigma = vec![T::zero(); groups];
        for gidx in 0..groups {
            let ci = gidx % c;
            let row = &x[gidx * m..(gidx + 1) * m];
            let mf = T::from_usize(m);
            let mu = row.iter().copied().sum::<T>() / mf;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / mf;
            let s = T::one() / (var + epst).sqrt();
            inv_sigma[gidx] = s;
            for i in 0..m {
                let hv = (row[i] - mu) * s;
                xh[gidx * m + i] = hv;
                out[gidx * m + i] = hv * gm[ci] + bt[ci];
            }
        }

        Tensor::from_op(
            out,
            shape,
            vec![self.clone(), gain.clone(), bias.clone()],
            move |g| {
                let mut gx = vec![T::zero(); g.len()];
                let mut ggain = vec![T::zero(); c];
                let mut gbias = vec![T::zero(); c];
                let mut dxh = vec![T::zero(); m];
                for gidx in 0..groups {
                    let ci = gidx % c;
                    let gs = &g[gidx * m..(gidx + 1) * m];
                    let hs = &xh[gidx * m..(gidx + 1) * m];
                    for i in 0..m {
                        ggain[ci] += gs[i] * hs[i];
                        gbias[ci] += gs[i];
                        dxh[i] = gs[i] * gm[ci];
                    }
                    norm_group_backward(&dxh, hs, inv_sigma[gidx], &mut gx[gidx * m..(gidx + 1) * m]);
                }
                vec![Some(gx), Some(ggain), Some(gbias)]
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(vec![1.0f64, 2.0, 3.0, -1.0, 0.0, 1.0], &[2, 3]);
        let y = x.softmax();
        let v = y.to_vec();
        for r in 0..2 {
            let s: f64 = v[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(v[2] > v[1] && v[1] > v[0]);
    }

    #[test]
    fn softmax_stable_with_large_logits() {
        let x = Tensor::new(vec![1000.0f64, 1001.0], &[1, 2]);
        let y = x.softmax().to_vec();
        assert!(y.iter().all(|v| v.is_finite()));
        assert!((y[0] + y[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let x = Tensor::new(vec![1.0f64, 2.0, 3.0, 4.0], &[1, 4]);
        let g = Tensor::ones(&[4]);
        let b = Tensor::zeros(&[4]);
        let y = x.layer_norm(&g, &b, 1e-5).to_vec();
        let mu: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 4.0;
        assert!(mu.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn instance_norm_normalizes_each_channel_plane() {
        let mut data = vec![0.0f64; 2 * 2 * 2 * 2];
        for (i, v) in data.iter_mut().enumerate() {
            *v = (i * i) as f64 * 0.1;
        }
        let x = Tensor::new(data, &[2, 2, 2, 2]);
        let g = Tensor::ones(&[2]);
        let b = Tensor::zeros(&[2]);
        let y = x.instance_norm(&g, &b, 1e-5).to_vec();
        for grp in 0..4 {
            let plane = &y[grp * 4..(grp + 1) * 4];
            let mu: f64 = plane.iter().sum::<f64>() / 4.0;
            assert!(mu.abs() < 1e-10, "group {grp} mean {mu}");
        }
    }

    #[test]
    #[should_panic(expected = "gain must be [3]")]
    fn layer_norm_gain_shape_rejected() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        let g = Tensor::<f32>::ones(&[2]);
        let b = Tensor::<f32>::zeros(&[3]);
        let _ = x.layer_norm(&g, &b, 1e-5);
    }
}
