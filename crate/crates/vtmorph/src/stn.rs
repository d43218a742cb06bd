//! Differentiable affine warping.
//!
//! Coordinate convention, frozen because parameter values depend on it:
//! images span [-1, 1] × [-1, 1] with x rightward and y downward; the center
//! of pixel (i, j) sits at x = (2j+1)/W − 1, y = (2i+1)/H − 1. A parameter
//! set θ = [a, b, tx, c, d, ty] maps *output* coordinates to *source*
//! coordinates (pull warping), so every output pixel bilinearly samples the
//! source at θ·[x, y, 1]ᵀ. Samples outside the source read zero.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StnError {
    #[error("affine parameters are singular: |det| = {det:e} below 1e-8")]
    Singular { det: f64 },
}

/// The six affine parameters [a, b, tx, c, d, ty] of the 2×3 matrix
/// [[a, b, tx], [c, d, ty]].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams<T: Scalar> {
    pub a: T,
    pub b: T,
    pub tx: T,
    pub c: T,
    pub d: T,
    pub ty: T,
}

impl<T: Scalar> AffineParams<T> {
    pub fn identity() -> Self {
        AffineParams {
            a: T::one(),
            b: T::zero(),
            tx: T::zero(),
            c: T::zero(),
            d: T::one(),
            ty: T::zero(),
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        AffineParams {
            tx: T::from_f64(tx),
            ty: T::from_f64(ty),
            ..Self::identity()
        }
    }

    /// Rotation by `radians` of the sampled content (y-down frame):
    /// linear part [[cos, sin], [−sin, cos]].
    pub fn rotation(radians: f64) -> Self {
        let (s, c) = radians.sin_cos();
        AffineParams {
            a: T::from_f64(c),
            b: T::from_f64(s),
            tx: T::zero(),
            c: T::from_f64(-s),
            d: T::from_f64(c),
            ty: T::zero(),
        }
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        AffineParams {
            a: T::from_f64(sx),
            d: T::from_f64(sy),
            ..Self::identity()
        }
    }

    pub fn shear(kx: f64, ky: f64) -> Self {
        AffineParams {
            b: T::from_f64(kx),
            c: T::from_f64(ky),
            ..Self::identity()
        }
    }

    pub fn from_array(v: [T; 6]) -> Self {
        AffineParams {
            a: v[0],
            b: v[1],
            tx: v[2],
            c: v[3],
            d: v[4],
            ty: v[5],
        }
    }

    pub fn to_array(self) -> [T; 6] {
        [self.a, self.b, self.tx, self.c, self.d, self.ty]
    }

    pub fn det(&self) -> T {
        self.a * self.d - self.b * self.c
    }

    /// Map a point (normalized coordinates).
    pub fn apply(&self, x: T, y: T) -> (T, T) {
        (
            self.a * x + self.b * y + self.tx,
            self.c * x + self.d * y + self.ty,
        )
    }

    /// Homogeneous 3×3 product M_self · M_other truncated to 2×3, so
    /// compose(s, o).apply(p) == s.apply(o.apply(p)).
    pub fn compose(&self, other: &Self) -> Self {
        AffineParams {
            a: self.a * other.a + self.b * other.c,
            b: self.a * other.b + self.b * other.d,
            tx: self.a * other.tx + self.b * other.ty + self.tx,
            c: self.c * other.a + self.d * other.c,
            d: self.c * other.b + self.d * other.d,
            ty: self.c * other.tx + self.d * other.ty + self.ty,
        }
    }

    pub fn invert(&self) -> Result<Self, StnError> {
        let det = self.det();
        if det.abs().as_f64() <= 1e-8 {
            return Err(StnError::Singular {
                det: det.as_f64(),
            });
        }
        let inv_det = T::one() / det;
        let (ia, ib) = (self.d * inv_det, -self.b * inv_det);
        let (ic, id) = (-self.c * inv_det, self.a * inv_det);
        Ok(AffineParams {
            a: ia,
            b: ib,
            tx: -(ia * self.tx + ib * self.ty),
            c: ic,
            d: id,
            ty: -(ic * self.tx + id * self.ty),
        })
    }

    /// Mean Euclidean distance, in pixels, between the images of the four
    /// corners (±1, ±1) under `self` and `other`, for an H×W target.
    pub fn corner_error(&self, other: &Self, h: usize, w: usize) -> f64 {
        let corners = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)];
        let (hw, hh) = (w as f64 / 2.0, h as f64 / 2.0);
        let mut total = 0.0;
        for (x, y) in corners {
            let (px, py) = self.apply(T::from_f64(x), T::from_f64(y));
            let (qx, qy) = other.apply(T::from_f64(x), T::from_f64(y));
            let dx = (px - qx).as_f64() * hw;
            let dy = (py - qy).as_f64() * hh;
            total += (dx * dx + dy * dy).sqrt();
        }
        total / 4.0
    }
}

/// Pack a batch of parameter sets into an N×6 tensor.
pub fn theta_tensor<T: Scalar>(params: &[AffineParams<T>]) -> Tensor<T> {
    let mut data = Vec::with_capacity(params.len() * 6);
    for p in params {
        data.extend_from_slice(&p.to_array());
    }
    Tensor::new(data, &[params.len(), 6])
}

/// Unpack an N×6 tensor into parameter sets.
pub fn theta_from_tensor<T: Scalar>(theta: &Tensor<T>) -> Vec<AffineParams<T>> {
    assert_eq!(theta.shape().len(), 2, "theta must be N×6, got {:?}", theta.shape());
    assert_eq!(theta.shape()[1], 6, "theta must be N×6, got {:?}", theta.shape());
    let data = theta.data();
    (0..theta.shape()[0])
        .map(|n| {
            AffineParams::from_array([
                data[n * 6],
                data[n * 6 + 1],
                data[n * 6 + 2],
                data[n * 6 + 3],
                data[n * 6 + 4],
                data[n * 6 + 5],
            ])
        })
        .collect()
}

/// Normalized center coordinate of pixel index `i` along an axis of `n`.
fn pixel_center<T: Scalar>(i: usize, n: usize) -> T {
    T::from_f64((2 * i + 1) as f64 / n as f64 - 1.0)
}

/// Sampling grid for θ (N×6) over an H×W target: N×H×W×2 source coordinates,
/// grid[n, i, j] = θₙ · [x_j, y_i, 1]ᵀ. Linear in θ, differentiable.
pub fn affine_grid<T: Scalar>(theta: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    assert!(h > 0 && w > 0, "affine_grid: target extent must be positive");
    assert_eq!(
        theta.shape().len(),
        2,
        "affine_grid: theta must be N×6, got {:?}",
        theta.shape()
    );
    assert_eq!(theta.shape()[1], 6, "affine_grid: theta must be N×6, got {:?}", theta.shape());
    let n = theta.shape()[0];

    let th = theta.to_vec();
    let mut out = vec![T::zero(); n * h * w * 2];
    for ni in 0..n {
        let t = &th[ni * 6..(ni + 1) * 6];
        for i in 0..h {
            let y = pixel_center::<T>(i, h);
            for j in 0..w {
                let x = pixel_center::<T>(j, w);
                let base = ((ni * h + i) * w + j) * 2;
                out[base] = t[0] * x + t[1] * y + t[2];
                out[base + 1] = t[3] * x + t[4] * y + t[5];
            }
        }
    }

    Tensor::from_op(
        out,
        vec![n, h, w, 2],
        vec![theta.clone()],
        move |g| {
            let mut dtheta = vec![T::zero(); n * 6];
            for ni in 0..n {
                let dt = &mut dtheta[ni * 6..(ni + 1) * 6];
                for i in 0..h {
                    let y = pixel_center::<T>(i, h);
                    for j in 0..w {
                        let x = pixel_center::<T>(j, w);
                        let base = ((ni * h + i) * w + j) * 2;
                        let (gx, gy) = (g[base], g[base + 1]);
                        dt[0] += gx * x;
                        dt[1] += gx * y;
                        dt[2] += gx;
                        dt[3] += gy * x;
                        dt[4] += gy * y;
                        dt[5] += gy;
                    }
                }
            }
            vec![Some(dtheta)]
        },
    )
}

/// Bilinear sampling of N×C×H×W at grid (N×H'×W'×2) source coordinates.
/// Out-of-bounds taps contribute zero. Differentiable in both arguments.
pub fn grid_sample<T: Scalar>(img: &Tensor<T>, grid: &Tensor<T>) -> Tensor<T> {
    let is = img.shape().to_vec();
    let gs = grid.shape().to_vec();
    assert_eq!(is.len(), 4, "grid_sample: image must be N×C×H×W, got {is:?}");
    assert_eq!(gs.len(), 4, "grid_sample: grid must be N×H×W×2, got {gs:?}");
    assert_eq!(gs[3], 2, "grid_sample: grid must be N×H×W×2, got {gs:?}");
    assert_eq!(
        is[0], gs[0],
        "grid_sample: batch mismatch between image {is:?} and grid {gs:?}"
    );
    let (n, c, h, w) = (is[0], is[1], is[2], is[3]);
    let (oh, ow) = (gs[1], gs[2]);

    let src = img.to_vec();
    let gv = grid.to_vec();
    let half_w = T::from_f64(w as f64 / 2.0);
    let half_h = T::from_f64(h as f64 / 2.0);
    let half = T::from_f64(0.5);

    // tap: value at integer (y, x) or zero outside
    let tap = move |buf: &[T], nc: usize, y: isize, x: isize| -> T {
        if y < 0 || y >= h as isize || x < 0 || x >= w as isize {
            T::zero()
        } else {
            buf[nc * h * w + y as usize * w + x as usize]
        }
    };

    let mut out = vec![T::zero(); n * c * oh * ow];
    for ni in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let gbase = ((ni * oh + i) * ow + j) * 2;
                let u = (gv[gbase] + T::one()) * half_w - half;
                let v = (gv[gbase + 1] + T::one()) * half_h - half;
                let x0 = u.floor();
                let y0 = v.floor();
                let fx = u - x0;
                let fy = v - y0;
                let (xi, yi) = (x0.as_f64() as isize, y0.as_f64() as isize);
                for ci in 0..c {
                    let nc = ni * c + ci;
                    let v00 = tap(&src, nc, yi, xi);
                    let v01 = tap(&src, nc, yi, xi + 1);
                    let v10 = tap(&src, nc, yi + 1, xi);
                    let v11 = tap(&src, nc, yi + 1, xi + 1);
                    let top = v00 + fx * (v01 - v00);
                    let bot = v10 + fx * (v11 - v10);
                    out[(nc * oh + i) * ow + j] = top + fy * (bot - top);
                }
            }
        }
    }

    Tensor::from_op(
        out,
        vec![n, c, oh, ow],
        vec![img.clone(), grid.clone()],
        move |g| {
            let mut dimg = vec![T::zero(); n * c * h * w];
            let mut dgrid = vec![T::zero(); n * oh * ow * 2];
            for ni in 0..n {
                for i in 0..oh {
                    for j in 0..ow {
                        let gbase = ((ni * oh + i) * ow + j) * 2;
                        let u = (gv[gbase] + T::one()) * half_w - half;
                        let v = (gv[gbase + 1] + T::one()) * half_h - half;
                        let x0 = u.floor();
                        let y0 = v.floor();
                        let fx = u - x0;
                        let fy = v - y0;
                        let (xi, yi) = (x0.as_f64() as isize, y0.as_f64() as isize);
                        let mut du = T::zero();
                        let mut dv = T::zero();
                        for ci in 0..c {
                            let nc = ni * c + ci;
                            let go = g[(nc * oh + i) * ow + j];
                            let v00 = tap(&src, nc, yi, xi);
                            let v01 = tap(&src, nc, yi, xi + 1);
                            let v10 = tap(&src, nc, yi + 1, xi);
                            let v11 = tap(&src, nc, yi + 1, xi + 1);
                            // value gradients: bilinear weights
                            let w00 = (T::one() - fx) * (T::one() - fy);
                            let w01 = fx * (T::one() - fy);
                            let w10 = (T::one() - fx) * fy;
                            let w11 = fx * fy;
                            let mut scatter = |y: isize, x: isize, wgt: T| {
                                if y >= 0 && y < h as isize && x >= 0 && x < w as isize {
                                    dimg[nc * h * w + y as usize * w + x as usize] += go * wgt;
                                }
                            };
                            scatter(yi, xi, w00);
                            scatter(yi, xi + 1, w01);
                            scatter(yi + 1, xi, w10);
                            scatter(yi + 1, xi + 1, w11);
                            // coordinate gradients
                            du += go * ((T::one() - fy) * (v01 - v00) + fy * (v11 - v10));
                            dv += go * ((T::one() - fx) * (v10 - v00) + fx * (v11 - v01));
                        }
                        dgrid[gbase] = du * half_w;
                        dgrid[gbase + 1] = dv * half_h;
                    }
                }
            }
            vec![Some(dimg), Some(dgrid)]
        },
    )
}

/// Affine warp: grid generation composed with bilinear sampling.
pub fn warp<T: Scalar>(img: &Tensor<T>, theta: &Tensor<T>) -> Tensor<T> {
    let s = img.shape();
    assert_eq!(s.len(), 4, "warp: image must be N×C×H×W, got {s:?}");
    let grid = affine_grid(theta, s[2], s[3]);
    grid_sample(img, &grid)
}

/// Warp with a single parameter set applied to every image in the batch.
pub fn warp_params<T: Scalar>(img: &Tensor<T>, params: &AffineParams<T>) -> Tensor<T> {
    let n = img.shape()[0];
    let theta = theta_tensor(&vec![*params; n]);
    warp(img, &theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    const W: usize = 4;
    const H: usize = 4;

    fn ramp() -> Tensor<f64> {
        Tensor::new((0..16).map(|v| v as f64 / 15.0).collect(), &[1, 1, H, W])
    }

    #[test]
    fn identity_grid_is_pixel_center_mesh() {
        let theta = theta_tensor(&[AffineParams::<f64>::identity()]);
        let grid = affine_grid(&theta, 2, 2);
        // centers at ±0.5 for a 2-pixel axis
        assert_eq!(
            grid.to_vec(),
            vec![-0.5, -0.5, 0.5, -0.5, -0.5, 0.5, 0.5, 0.5]
        );
    }

    #[test]
    fn translation_shifts_grid_x_by_half() {
        let theta = theta_tensor(&[AffineParams::<f64>::translation(0.5, 0.0)]);
        let grid = affine_grid(&theta, 2, 2).to_vec();
        let id = affine_grid(&theta_tensor(&[AffineParams::<f64>::identity()]), 2, 2).to_vec();
        for k in 0..4 {
            assert!((grid[2 * k] - (id[2 * k] + 0.5)).abs() < 1e-12);
            assert_eq!(grid[2 * k + 1], id[2 * k + 1]);
        }
    }

    #[test]
    fn rotation_90_maps_corner_by_hand_product() {
        // [[cos90, sin90], [−sin90, cos90]] · (1, −1) = (−1, −1)
        let r = AffineParams::<f64>::rotation(std::f64::consts::FRAC_PI_2);
        let (x, y) = r.apply(1.0, -1.0);
        assert!((x + 1.0).abs() < 1e-12);
        assert!((y + 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_warp_reproduces_input_exactly() {
        let img = ramp();
        let theta = theta_tensor(&[AffineParams::identity()]);
        let out = warp(&img, &theta);
        assert_eq!(out.to_vec(), img.to_vec());
    }

    #[test]
    fn one_pixel_translation_shifts_columns() {
        // tx = 2/W pulls the source one pixel to the right: out[:, j] = in[:, j+1],
        // last column samples outside and reads zero.
        let img = ramp();
        let theta = theta_tensor(&[AffineParams::<f64>::translation(2.0 / W as f64, 0.0)]);
        let out = warp(&img, &theta).to_vec();
        let src = img.to_vec();
        for i in 0..H {
            for j in 0..W {
                let expected = if j + 1 < W { src[i * W + j + 1] } else { 0.0 };
                assert!(
                    (out[i * W + j] - expected).abs() < 1e-12,
                    "pixel ({i},{j}): {} vs {expected}",
                    out[i * W + j]
                );
            }
        }
    }

    #[test]
    fn warp_is_linear_in_image() {
        let img = ramp();
        let scaled = img.mul_scalar(3.0);
        let theta = theta_tensor(&[AffineParams::<f64>::rotation(0.3)]);
        let a = warp(&img, &theta).to_vec();
        let b = warp(&scaled, &theta).to_vec();
        for (x, y) in a.iter().zip(&b) {
            assert!((y - 3.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_image_stays_constant_for_inbounds_grid() {
        let img = Tensor::<f64>::full(&[1, 1, 8, 8], 0.7);
        let theta = theta_tensor(&[AffineParams::<f64>::scaling(0.5, 0.5)]);
        let out = warp(&img, &theta).to_vec();
        for v in out {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_is_linear_in_theta() {
        // grid(θ₁+θ₂) = grid(θ₁) + grid(θ₂) − grid(0)
        let t1 = theta_tensor(&[AffineParams::<f64>::rotation(0.4)]);
        let t2 = theta_tensor(&[AffineParams::<f64>::translation(0.2, -0.1)]);
        let tsum = t1.add(&t2);
        let zero = Tensor::<f64>::zeros(&[1, 6]);
        let g1 = affine_grid(&t1, 3, 5).to_vec();
        let g2 = affine_grid(&t2, 3, 5).to_vec();
        let g0 = affine_grid(&zero, 3, 5).to_vec();
        let gs = affine_grid(&tsum, 3, 5).to_vec();
        for i in 0..gs.len() {
            assert!((gs[i] - (g1[i] + g2[i] - g0[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn invert_identities() {
        let id = AffineParams::<f64>::identity();
        assert_eq!(id.invert().unwrap(), id);
        let t = AffineParams::<f64>::translation(0.3, -0.2);
        let ti = t.invert().unwrap();
        assert!((ti.tx + 0.3).abs() < 1e-12 && (ti.ty - 0.2).abs() < 1e-12);
    }

    #[test]
    fn compose_invert_round_trip_within_tolerance() {
        let t = AffineParams::<f64>::rotation(0.5)
            .compose(&AffineParams::scaling(1.1, 0.9))
            .compose(&AffineParams::translation(0.2, -0.15));
        let round = t.invert().unwrap().compose(&t);
        let id = AffineParams::<f64>::identity();
        for (a, b) in round.to_array().iter().zip(id.to_array()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rotations_compose_additively() {
        // hand trigonometric identity: R(α)·R(β) = R(α+β)
        let a = AffineParams::<f64>::rotation(0.3);
        let b = AffineParams::<f64>::rotation(0.45);
        let ab = a.compose(&b);
        let direct = AffineParams::<f64>::rotation(0.75);
        for (x, y) in ab.to_array().iter().zip(direct.to_array()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_theta_rejected_with_det() {
        let t = AffineParams::<f64> {
            a: 1.0,
            b: 2.0,
            tx: 0.0,
            c: 0.5,
            d: 1.0,
            ty: 0.0,
        };
        assert!((t.det() - 0.0_f64).abs() < 1e-12);
        match t.invert() {
            Err(StnError::Singular { det }) => assert!(det.abs() <= 1e-8),
            other => panic!("expected Singular, got {other:?}"),
        }
    }

    #[test]
    fn corner_error_identities() {
        let id = AffineParams::<f64>::identity();
        assert_eq!(id.corner_error(&id, 64, 64), 0.0);
        // tx of one pixel (2/W) is exactly 1 px of corner error
        let t = AffineParams::<f64>::translation(2.0 / 64.0, 0.0);
        assert!((t.corner_error(&id, 64, 64) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn corner_error_matches_bruteforce_on_random_pair() {
        let p = AffineParams::<f64>::rotation(0.2).compose(&AffineParams::translation(0.1, 0.05));
        let q = AffineParams::<f64>::scaling(1.05, 0.95);
        let (h, w) = (48, 32);
        // independent per-corner computation
        let mut total = 0.0;
        for (x, y) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
            let px = p.a * x + p.b * y + p.tx;
            let py = p.c * x + p.d * y + p.ty;
            let qx = q.a * x + q.b * y + q.tx;
            let qy = q.c * x + q.d * y + q.ty;
            let dx = (px - qx) * w as f64 / 2.0;
            let dy = (py - qy) * h as f64 / 2.0;
            total += (dx * dx + dy * dy).sqrt();
        }
        let expected = total / 4.0;
        assert!((p.corner_error(&q, h, w) - expected).abs() < 1e-12);
    }

    #[test]
    fn warp_round_trip_interior_error_small() {
        // mild transform on a smooth [0,1] image: interior mean abs error < 0.02
        let n = 16;
        let data: Vec<f64> = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                0.5 + 0.4 * ((i as f64 / 5.0).sin() * (j as f64 / 4.0).cos())
            })
            .collect();
        let img = Tensor::new(data, &[1, 1, n, n]);
        let t = AffineParams::<f64>::rotation(0.1).compose(&AffineParams::translation(0.05, -0.04));
        let warped = warp_params(&img, &t);
        let back = warp_params(&warped, &t.invert().unwrap());
        let a = img.to_vec();
        let b = back.to_vec();
        let mut total = 0.0;
        let mut count = 0;
        for i in 3..n - 3 {
            for j in 3..n - 3 {
                total += (a[i * n + j] - b[i * n + j]).abs();
                count += 1;
            }
        }
        let mean_err = total / count as f64;
        assert!(mean_err < 0.02, "interior error {mean_err}");
    }

    #[test]
    fn warp_gradient_nonzero_on_theta_leaf() {
        let img = ramp();
        let mut init = AffineParams::<f64>::identity().to_array().to_vec();
        init[2] = 0.013; // slightly off-lattice
        let theta = Tensor::param(init, &[1, 6]);
        warp(&img, &theta).sum().backward().unwrap();
        let g = theta.grad().unwrap();
        assert!(g.iter().any(|v| v.abs() > 1e-9), "grad {g:?}");
    }
}
