//! Normalized cross correlation.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{same_shape, MetricError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NccScore {
    pub value: f64,
    /// Set when either input had (numerically) zero variance; the score is
    /// then defined as 0.
    pub zero_variance: bool,
}

/// Zero-mean, unit-variance dot product over all pixels, in [-1, 1].
pub fn ncc<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<NccScore, MetricError> {
    same_shape(x, y)?;
    let n = x.numel() as f64;
    let xv = x.to_vec();
    let yv = y.to_vec();
    let mx: f64 = xv.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let my: f64 = yv.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let (mut vx, mut vy, mut cov) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in xv.iter().zip(&yv) {
        let da = a.as_f64() - mx;
        let db = b.as_f64() - my;
        vx += da * da;
        vy += db * db;
        cov += da * db;
    }
    let denom = (vx * vy).sqrt();
    if denom < 1e-30 {
        return Ok(NccScore {
            value: 0.0,
            zero_variance: true,
        });
    }
    Ok(NccScore {
        value: (cov / denom).clamp(-1.0, 1.0),
        zero_variance: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy(seed: u64) -> Tensor<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::new((0..64).map(|_| rng.gen_range(0.0..1.0)).collect(), &[8, 8])
    }

    #[test]
    fn self_correlation_is_one() {
        let x = noisy(2);
        let s = ncc(&x, &x).unwrap();
        assert!((s.value - 1.0).abs() < 1e-12);
        assert!(!s.zero_variance);
    }

    #[test]
    fn negated_shifted_is_minus_one() {
        let x = noisy(4);
        let y = x.neg().add_scalar(0.75);
        let s = ncc(&x, &y).unwrap();
        assert!((s.value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_flagged_and_zero() {
        let x = Tensor::<f64>::full(&[8, 8], 0.5);
        let y = noisy(7);
        let s = ncc(&x, &y).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(s.zero_variance);
    }

    #[test]
    fn symmetric() {
        let x = noisy(8);
        let y = noisy(9);
        assert_eq!(ncc(&x, &y).unwrap().value, ncc(&y, &x).unwrap().value);
    }
}
