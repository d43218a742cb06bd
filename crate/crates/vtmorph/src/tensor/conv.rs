//! 2-D convolution, transposed convolution, and pooling.
//!
//! Convolutions run as im2col + GEMM. Kernels parallelize over the batch
//! with every thread writing a disjoint slice and all cross-sample
//! reductions summed in index order, so results are bit-identical no matter
//! the thread count.

use rayon::prelude::*;

use crate::scalar::Scalar;

use super::Tensor;

/// Output extent of a strided window scan.
fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(
        size + 2 * pad >= k,
        "conv: kernel {k} larger than padded input {size}+2*{pad}"
    );
    (size + 2 * pad - k) / stride + 1
}

/// Gather sliding windows of one C×H×W sample into a (C·kh·kw)×(ho·wo)
/// column matrix. Out-of-bounds taps read zero.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    debug_assert_eq!(cols.len(), c * kh * kw * ho * wo);
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = row + oy * wo;
                    if iy < 0 || iy >= h as isize {
                        cols[dst..dst + wo].fill(T::zero());
                        continue;
                    }
                    let src_row = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        cols[dst + ox] = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            x[src_row + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a column matrix back onto C×H×W.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    x: &mut [T],
) {
    debug_assert_eq!(x.len(), c * h * w);
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            x[dst_row + ix as usize] += cols[row + oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tensor<T> {
    /// Cross-correlation of N×Cin×H×W with Cout×Cin×kh×kw weights.
    pub fn conv2d(&self, weight: &Tensor<T>, stride: usize, pad: usize) -> Tensor<T> {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        assert_eq!(xs.len(), 4, "conv2d: input must be N×C×H×W, got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d: weight must be Cout×Cin×kh×kw, got {ws:?}");
        assert_eq!(
            xs[1], ws[1],
            "conv2d: channel mismatch between input {xs:?} and weight {ws:?}"
        );
        assert!(stride > 0, "conv2d: stride must be positive");
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        let ho = conv_out(h, kh, stride, pad);
        let wo = conv_out(w, kw, stride, pad);
        let ck = cin * kh * kw;

        let x = self.to_vec();
        let wv = weight.to_vec();
        let mut out = vec![T::zero(); n * cout * ho * wo];
        out.par_chunks_mut(cout * ho * wo)
            .enumerate()
            .for_each(|(ni, out_n)| {
                let mut cols = vec![T::zero(); ck * ho * wo];
                im2col(
                    &x[ni * cin * h * w..(ni + 1) * cin * h * w],
                    cin, h, w, kh, kw, stride, pad, ho, wo, &mut cols,
                );
                T::gemm(false, false, cout, ck, ho * wo, T::one(), &wv, &cols, T::zero(), out_n);
            });

        Tensor::from_op(
            out,
            vec![n, cout, ho, wo],
            vec![self.clone(), weight.clone()],
            move |g| {
                // dX[n] = col2im(Wᵀ · g[n]); parallel over samples.
                let mut dx = vec![T::zero(); n * cin * h * w];
                dx.par_chunks_mut(cin * h * w).enumerate().for_each(|(ni, dx_n)| {
                    let gs = &g[ni * cout * ho * wo..(ni + 1) * cout * ho * wo];
                    let mut dcols = vec![T::zero(); ck * ho * wo];
                    T::gemm(true, false, ck, cout, ho * wo, T::one(), &wv, gs, T::zero(), &mut dcols);
                    col2im(&dcols, cin, h, w, kh, kw, stride, pad, ho, wo, dx_n);
                });

                // dW = Σ_n g[n] · cols[n]ᵀ; per-sample partials summed in order.
                let partials: Vec<Vec<T>> = (0..n)
                    .into_par_iter()
                    .map(|ni| {
                        let gs = &g[ni * cout * ho * wo..(ni + 1) * cout * ho * wo];
                        let mut cols = vec![T::zero(); ck * ho * wo];
                        im2col(
                            &x[ni * cin * h * w..(ni + 1) * cin * h * w],
                            cin, h, w, kh, kw, stride, pad, ho, wo, &mut cols,
                        );
                        let mut dw = vec![T::zero(); cout * ck];
                        T::gemm(false, true, cout, ho * wo, ck, T::one(), gs, &cols, T::zero(), &mut dw);
                        dw
                    })
                    .collect();
                let mut dw = vec![T::zero(); cout * ck];
                for p in &partials {
                    for (d, v) in dw.iter_mut().zip(p) {
                        *d += *v;
                    }
                }
                vec![Some(dx), Some(dw)]
            },
        )
    }

    /// Transposed convolution (fractionally strided): N×Cin×H×W with
    /// Cin×Cout×kh×kw weights, output (H−1)·stride − 2·pad + kh.
    pub fn conv_transpose2d(&self, weight: &Tensor<T>, stride: usize, pad: usize) -> Tensor<T> {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        assert_eq!(xs.len(), 4, "conv_transpose2d: input must be N×C×H×W, got {xs:?}");
        assert_eq!(ws.len(), 4, "conv_transpose2d: weight must be Cin×Cout×kh×kw, got {ws:?}");
        assert_eq!(
            xs[1], ws[0],
            "conv_transpose2d: channel mismatch between input {xs:?} and weight {ws:?}"
        );
        assert!(stride > 0, "conv_transpose2d: stride must be positive");
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
        assert!(
            (h - 1) * stride + kh >= 2 * pad,
            "conv_transpose2d: output size would be non-positive"
        );
        let ho = (h - 1) * stride + kh - 2 * pad;
        let wo = (w - 1) * stride + kw - 2 * pad;
        let ck = cout * kh * kw;

        let x = self.to_vec();
        let wv = weight.to_vec();
        let mut out = vec![T::zero(); n * cout * ho * wo];
        out.par_chunks_mut(cout * ho * wo)
            .enumerate()
            .for_each(|(ni, out_n)| {
                let xn = &x[ni * cin * h * w..(ni + 1) * cin * h * w];
                // cols = Wᵀ(view ck×cin) · x_flat(cin×hw)
                let mut cols = vec![T::zero(); ck * h * w];
                T::gemm(true, false, ck, cin, h * w, T::one(), &wv, xn, T::zero(), &mut cols);
                col2im(&cols, cout, ho, wo, kh, kw, stride, pad, h, w, out_n);
            });

        Tensor::from_op(
            out,
            vec![n, cout, ho, wo],
            vec![self.clone(), weight.clone()],
            move |g| {
                // dX[n] = W(cin×ck) · im2col(g[n])
                let mut dx = vec![T::zero(); n * cin * h * w];
                dx.par_chunks_mut(cin * h * w).enumerate().for_each(|(ni, dx_n)| {
                    let gs = &g[ni * cout * ho * wo..(ni + 1) * cout * ho * wo];
                    let mut gcols = vec![T::zero(); ck * h * w];
                    im2col(gs, cout, ho, wo, kh, kw, stride, pad, h, w, &mut gcols);
                    T::gemm(false, false, cin, ck, h * w, T::one(), &wv, &gcols, T::zero(), dx_n);
                });

                // dW = Σ_n x_flat[n] · im2col(g[n])ᵀ
                let partials: Vec<Vec<T>> = (0..n)
                    .into_par_iter()
                    .map(|ni| {
                        let xn = &x[ni * cin * h * w..(ni + 1) * cin * h * w];
                        let gs = &g[ni * cout * ho * wo..(ni + 1) * cout * ho * wo];
                        let mut gcols = vec![T::zero(); ck * h * w];
                        im2col(gs, cout, ho, wo, kh, kw, stride, pad, h, w, &mut gcols);
                        let mut dw = vec![T::zero(); cin * ck];
                        T::gemm(false, true, cin, h * w, ck, T::one(), xn, &gcols, T::zero(), &mut dw);
                        dw
                    })
                    .collect();
                let mut dw = vec![T::zero(); cin * ck];
                for p in &partials {
                    for (d, v) in dw.iter_mut().zip(p) {
                        *d += *v;
                    }
                }
                vec![Some(dx), Some(dw)]
            },
        )
    }

    /// Average pooling with square window `k`, stride `s`, no padding.
    pub fn avg_pool2d(&self, k: usize, s: usize) -> Tensor<T> {
        let xs = self.shape().to_vec();
        assert_eq!(xs.len(), 4, "avg_pool2d: input must be N×C×H×W, got {xs:?}");
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let ho = conv_out(h, k, s, 0);
        let wo = conv_out(w, k, s, 0);
        let inv = T::one() / T::from_usize(k * k);

        let x = self.to_vec();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for nc in 0..n * c {
            let src = &x[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * ho * wo..(nc + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = T::zero();
                    for ky in 0..k {
                        for kx in 0..k {
                            acc += src[(oy * s + ky) * w + ox * s + kx];
                        }
                    }
                    dst[oy * wo + ox] = acc * inv;
                }
            }
        }

        Tensor::from_op(out, vec![n, c, ho, wo], vec![self.clone()], move |g| {
            let mut dx = vec![T::zero(); n * c * h * w];
            for nc in 0..n * c {
                let gs = &g[nc * ho * wo..(nc + 1) * ho * wo];
                let dst = &mut dx[nc * h * w..(nc + 1) * h * w];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let gv = gs[oy * wo + ox] * inv;
                        for ky in 0..k {
                            for kx in 0..k {
                                dst[(oy * s + ky) * w + ox * s + kx] += gv;
                            }
                        }
                    }
                }
            }
            vec![Some(dx)]
        })
    }

    /// Max pooling with square window `k`, stride `s`, no padding.
    pub fn max_pool2d(&self, k: usize, s: usize) -> Tensor<T> {
        let xs = self.shape().to_vec();
        assert_eq!(xs.len(), 4, "max_pool2d: input must be N×C×H×W, got {xs:?}");
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let ho = conv_out(h, k, s, 0);
        let wo = conv_out(w, k, s, 0);

        let x = self.to_vec();
        let mut out = vec![T::zero(); n * c * ho * wo];
        let mut argmax = vec![0usize; n * c * ho * wo];
        for nc in 0..n * c {
            let src = &x[nc * h * w..(nc + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = src[(oy * s) * w + ox * s];
                    let mut best_at = (oy * s) * w + ox * s;
                    for ky in 0..k {
                        for kx in 0..k {
                            let at = (oy * s + ky) * w + ox * s + kx;
                            if src[at] > best {
                                best = src[at];
                                best_at = at;
                            }
                        }
                    }
                    out[nc * ho * wo + oy * wo + ox] = best;
                    argmax[nc * ho * wo + oy * wo + ox] = nc * h * w + best_at;
                }
            }
        }

        Tensor::from_op(out, vec![n, c, ho, wo], vec![self.clone()], move |g| {
            let mut dx = vec![T::zero(); n * c * h * w];
            for (gi, &at) in g.iter().zip(&argmax) {
                dx[at] += *gi;
            }
            vec![Some(dx)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_same_padding_keeps_shape() {
        // 1×1×8×8 input, 1×1×3×3 kernel, stride 1, pad 1 -> 1×1×8×8
        let x = Tensor::<f64>::ones(&[1, 1, 8, 8]);
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let y = x.conv2d(&w, 1, 1);
        assert_eq!(y.shape(), &[1, 1, 8, 8]);
        // interior pixels sum a full 3x3 window of ones
        assert_eq!(y.to_vec()[9 * 1 + 0 + 8 + 1], 9.0); // (1,1)
        // corner sums a 2x2 window
        assert_eq!(y.to_vec()[0], 4.0);
    }

    #[test]
    fn conv_matches_hand_computation() {
        // 1 channel 3x3 image, 2x2 kernel, stride 1, no pad.
        let x = Tensor::new((1..=9).map(|v| v as f64).collect(), &[1, 1, 3, 3]);
        let w = Tensor::new(vec![1.0f64, 0.0, 0.0, -1.0], &[1, 1, 2, 2]);
        let y = x.conv2d(&w, 1, 0);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        // out[oy,ox] = x[oy,ox] - x[oy+1,ox+1]
        assert_eq!(y.to_vec(), vec![1.0 - 5.0, 2.0 - 6.0, 4.0 - 8.0, 5.0 - 9.0]);
    }

    #[test]
    #[should_panic(expected = "channel mismatch")]
    fn conv_channel_mismatch_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        let _ = x.conv2d(&w, 1, 1);
    }

    #[test]
    fn conv_transpose_doubles_spatial_size() {
        let x = Tensor::<f64>::ones(&[1, 1, 4, 4]);
        let w = Tensor::<f64>::ones(&[1, 1, 4, 4]);
        let y = x.conv_transpose2d(&w, 2, 1);
        assert_eq!(y.shape(), &[1, 1, 8, 8]);
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_transpose(y)> with shared weights.
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut randv = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let x = Tensor::new(randv(2 * 3 * 8 * 8), &[2, 3, 8, 8]);
        let w = Tensor::new(randv(5 * 3 * 4 * 4), &[5, 3, 4, 4]);
        let y = Tensor::new(randv(2 * 5 * 4 * 4), &[2, 5, 4, 4]);

        let cx = x.conv2d(&w, 2, 1); // 2×5×4×4
        let lhs: f64 = cx.data().iter().zip(y.data().iter()).map(|(a, b)| a * b).sum();

        // conv_transpose wants weights as Cin×Cout×kh×kw = 5? No: conv weight
        // is Cout×Cin×k×k = 5×3×4×4; the adjoint maps y (channels 5) back to
        // 3 channels, so the same buffer reads as Cin(=5)×Cout(=3) here.
        let wt = Tensor::new(w.to_vec(), &[5, 3, 4, 4]);
        let ty = y.conv_transpose2d(&wt, 2, 1); // 2×3×8×8
        let rhs: f64 = ty.data().iter().zip(x.data().iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "adjoint identity violated: {lhs} vs {rhs}");
    }

    #[test]
    fn pooling_shapes_and_values() {
        let x = Tensor::new((0..16).map(|v| v as f64).collect(), &[1, 1, 4, 4]);
        let a = x.avg_pool2d(2, 2);
        assert_eq!(a.shape(), &[1, 1, 2, 2]);
        assert_eq!(a.to_vec(), vec![2.5, 4.5, 10.5, 12.5]);
        let m = x.max_pool2d(2, 2);
        assert_eq!(m.to_vec(), vec![5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = Tensor::param(vec![1.0f64, 2.0, 4.0, 3.0], &[1, 1, 2, 2]);
        x.max_pool2d(2, 2).sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
    }
}
