//! Fréchet distance between Gaussians fitted to feature sets.

use nalgebra::{DMatrix, DVector};

use super::MetricError;

/// N feature rows of a fixed dimension, stored row-major in f64.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSet {
    pub fn new(dim: usize) -> Self {
        FeatureSet {
            n: 0,
            dim,
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim, "feature row has wrong dimension");
        self.data.extend_from_slice(row);
        self.n += 1;
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut set = FeatureSet::new(dim);
        for r in rows {
            set.push(r);
        }
        set
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn mean(&self) -> DVector<f64> {
        let mut mu = DVector::zeros(self.dim);
        for row in self.data.chunks(self.dim) {
            for (i, v) in row.iter().enumerate() {
                mu[i] += v;
            }
        }
        mu / self.n as f64
    }

    /// Sample covariance (denominator N−1) with diagonal jitter.
    fn covariance(&self, mu: &DVector<f64>, jitter: f64) -> DMatrix<f64> {
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for row in self.data.chunks(self.dim) {
            let centered = DVector::from_row_slice(row) - mu;
            cov += &centered * centered.transpose();
        }
        cov /= (self.n - 1) as f64;
        for i in 0..self.dim {
            cov[(i, i)] += jitter;
        }
        cov
    }
}

const JITTER: f64 = 1e-6;

/// Symmetric positive square root via eigendecomposition; negative
/// eigenvalues beyond tolerance are an error, tiny ones are clamped to 0.
fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricError> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let max_eig = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if min_eig < -1e-8 * max_eig.abs().max(1.0) {
        return Err(MetricError::NotPsd { min_eig, max_eig });
    }
    let sqrt_vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()),
    );
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose())
}

/// ‖μa − μb‖² + Tr(Ca + Cb − 2·(Ca·Cb)^½), with the trace of the product
/// root computed through the symmetric form √Ca·Cb·√Ca.
pub fn frechet_distance(a: &FeatureSet, b: &FeatureSet) -> Result<f64, MetricError> {
    if a.dim() != b.dim() {
        return Err(MetricError::DimMismatch {
            a: a.dim(),
            b: b.dim(),
        });
    }
    if a.len() < 2 || b.len() < 2 {
        return Err(MetricError::TooFewRows(a.len().min(b.len())));
    }

    let mu_a = a.mean();
    let mu_b = b.mean();
    let ca = a.covariance(&mu_a, JITTER);
    let cb = b.covariance(&mu_b, JITTER);

    let sqrt_ca = sqrtm_psd(&ca)?;
    let inner = &sqrt_ca * &cb * &sqrt_ca;
    let sqrt_inner = sqrtm_psd(&inner)?;

    let mean_term = (&mu_a - &mu_b).norm_squared();
    let trace_term = ca.trace() + cb.trace() - 2.0 * sqrt_inner.trace();
    Ok((mean_term + trace_term).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_set(seed: u64, n: usize, dim: usize, mu: f64, sigma: f64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = FeatureSet::new(dim);
        for _ in 0..n {
            let row: Vec<f64> = (0..dim)
                .map(|_| mu + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            set.push(&row);
        }
        set
    }

    #[test]
    fn identical_sets_score_zero() {
        let a = gaussian_set(1, 200, 8, 0.0, 1.0);
        let d = frechet_distance(&a, &a.clone()).unwrap();
        assert!(d < 1e-6, "distance {d}");
    }

    #[test]
    fn one_dimensional_gaussians_match_closed_form() {
        // N(0,1) vs N(3,1): (3−0)² + (1+1−2·1) = 9
        let a = gaussian_set(2, 10_000, 1, 0.0, 1.0);
        let b = gaussian_set(3, 10_000, 1, 3.0, 1.0);
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 9.0).abs() < 0.5, "distance {d}");
    }

    #[test]
    fn symmetric_within_tolerance() {
        let a = gaussian_set(4, 300, 6, 0.0, 1.0);
        let b = gaussian_set(5, 300, 6, 0.5, 1.3);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-6, "{ab} vs {ba}");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = gaussian_set(6, 10, 3, 0.0, 1.0);
        let b = gaussian_set(7, 10, 4, 0.0, 1.0);
        assert!(matches!(
            frechet_distance(&a, &b),
            Err(MetricError::DimMismatch { a: 3, b: 4 })
        ));
    }

    #[test]
    fn separated_means_dominate() {
        let a = gaussian_set(8, 500, 4, 0.0, 0.5);
        let b = gaussian_set(9, 500, 4, 2.0, 0.5);
        // expected ≈ 4·(2²) = 16
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 16.0).abs() < 1.0, "distance {d}");
    }
}
