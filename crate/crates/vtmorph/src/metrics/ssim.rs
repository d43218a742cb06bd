//! Gaussian-windowed structural similarity.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{same_shape, MetricError};

/// Mean SSIM over all fully valid window positions, Gaussian-weighted.
/// `c1`, `c2` are the stabilizers for a [0, 1] dynamic range. Symmetric in
/// its arguments; ssim(x, x) = 1.
pub fn ssim<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    window: usize,
    sigma: f64,
    c1: f64,
    c2: f64,
) -> Result<f64, MetricError> {
    same_shape(x, y)?;
    let shape = x.shape().to_vec();
    assert_eq!(shape.len(), 2, "ssim: images must be H×W, got {shape:?}");
    let (h, w) = (shape[0], shape[1]);
    if h < window || w < window {
        return Err(MetricError::WindowTooLarge {
            shape,
            window,
        });
    }

    // normalized 2-D Gaussian window
    let half = (window - 1) as f64 / 2.0;
    let mut kernel = vec![0.0f64; window * window];
    let mut total = 0.0;
    for i in 0..window {
        for j in 0..window {
            let dy = i as f64 - half;
            let dx = j as f64 - half;
            let v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            kernel[i * window + j] = v;
            total += v;
        }
    }
    for v in &mut kernel {
        *v /= total;
    }

    let xv = x.to_vec();
    let yv = y.to_vec();
    let mut acc = 0.0;
    let mut count = 0usize;
    for oy in 0..=(h - window) {
        for ox in 0..=(w - window) {
            let (mut mx, mut my) = (0.0f64, 0.0f64);
            let (mut sxx, mut syy, mut sxy) = (0.0f64, 0.0f64, 0.0f64);
            for i in 0..window {
                for j in 0..window {
                    let k = kernel[i * window + j];
                    let a = xv[(oy + i) * w + ox + j].as_f64();
                    let b = yv[(oy + i) * w + ox + j].as_f64();
                    mx += k * a;
                    my += k * b;
                    sxx += k * a * a;
                    syy += k * b * b;
                    sxy += k * a * b;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cxy = sxy - mx * my;
            let s = ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            acc += s;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricConfig;

    fn run(x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
        let c = MetricConfig::default();
        ssim(x, y, c.ssim_window, c.ssim_sigma, c.ssim_c1, c.ssim_c2).unwrap()
    }

    fn noisy_image(seed: u64, n: usize) -> Tensor<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::new((0..n * n).map(|_| rng.gen_range(0.0..1.0)).collect(), &[n, n])
    }

    #[test]
    fn self_similarity_is_one() {
        let x = noisy_image(3, 16);
        assert!((run(&x, &x) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric() {
        let x = noisy_image(5, 16);
        let y = noisy_image(6, 16);
        assert_eq!(run(&x, &y), run(&y, &x));
    }

    #[test]
    fn inverted_half_plane_scores_low() {
        // half-black/half-white vs its inversion
        let n = 16;
        let data: Vec<f64> = (0..n * n)
            .map(|k| if (k % n) < n / 2 { 0.0 } else { 1.0 })
            .collect();
        let x = Tensor::new(data.clone(), &[n, n]);
        let inv: Vec<f64> = data.iter().map(|v| 1.0 - v).collect();
        let y = Tensor::new(inv, &[n, n]);
        let s = run(&x, &y);
        assert!(s < 0.2, "ssim {s}");
    }

    #[test]
    fn window_larger_than_image_rejected() {
        let x = Tensor::<f64>::zeros(&[8, 8]);
        assert!(matches!(
            ssim(&x, &x, 11, 1.5, 1e-4, 9e-4),
            Err(MetricError::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = Tensor::<f64>::zeros(&[16, 16]);
        let y = Tensor::<f64>::zeros(&[16, 12]);
        assert!(matches!(
            ssim(&x, &y, 11, 1.5, 1e-4, 9e-4),
            Err(MetricError::ShapeMismatch { .. })
        ));
    }
}
