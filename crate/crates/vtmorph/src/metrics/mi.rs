//! Histogram mutual information in nats.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{same_shape, MetricError};

fn bin_of<T: Scalar>(v: T, bins: usize) -> usize {
    let b = (v.as_f64().clamp(0.0, 1.0) * bins as f64).floor() as usize;
    b.min(bins - 1)
}

/// Plug-in MI of the joint intensity histogram over [0, 1]²:
/// Σ p(i,j)·ln(p(i,j)/(p(i)·p(j))), empty cells skipped. The estimator has
/// the usual positive sampling bias of roughly (bins−1)²/(2N) nats on
/// independent inputs, so small images score noticeably above zero.
pub fn mutual_information<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    bins: usize,
) -> Result<f64, MetricError> {
    if bins < 2 {
        return Err(MetricError::BadBins(bins));
    }
    same_shape(x, y)?;
    let n = x.numel() as f64;
    let mut joint = vec![0.0f64; bins * bins];
    let mut px = vec![0.0f64; bins];
    let mut py = vec![0.0f64; bins];
    for (a, b) in x.data().iter().zip(y.data().iter()) {
        let (i, j) = (bin_of(*a, bins), bin_of(*b, bins));
        joint[i * bins + j] += 1.0;
        px[i] += 1.0;
        py[j] += 1.0;
    }
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let pij = joint[i * bins + j] / n;
            if pij > 0.0 {
                mi += pij * (pij * n * n / (px[i] * py[j])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Shannon entropy (nats) of the marginal intensity histogram — the oracle
/// for MI(x, x) = H(x).
pub fn histogram_entropy<T: Scalar>(x: &Tensor<T>, bins: usize) -> Result<f64, MetricError> {
    if bins < 2 {
        return Err(MetricError::BadBins(bins));
    }
    let n = x.numel() as f64;
    let mut hist = vec![0.0f64; bins];
    for v in x.data().iter() {
        hist[bin_of(*v, bins)] += 1.0;
    }
    Ok(hist
        .iter()
        .filter(|c| **c > 0.0)
        .map(|c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum())
}
