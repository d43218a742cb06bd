//! Perceptual distance: layerwise unit-normalized feature differences under
//! a pluggable extractor.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{same_shape, FeatureExtractor, MetricError};

/// Mean over layers of the mean squared difference between channel-unit-
/// normalized feature maps. Zero iff the extracted features are identical.
pub fn perceptual_distance<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<f64, MetricError> {
    same_shape(x, y)?;
    let fx = extractor.feature_maps(x);
    let fy = extractor.feature_maps(y);
    assert_eq!(fx.len(), fy.len(), "extractor returned inconsistent layer counts");

    let mut total = 0.0;
    for (mx, my) in fx.iter().zip(&fy) {
        assert_eq!(mx.shape(), my.shape());
        let s = mx.shape(); // 1×C×H×W
        let (c, h, w) = (s[1], s[2], s[3]);
        let a = mx.data();
        let b = my.data();
        let mut layer = 0.0;
        for pos in 0..h * w {
            // channel vectors at this position, unit-normalized
            let mut na = 0.0f64;
            let mut nb = 0.0f64;
            for ci in 0..c {
                let va = a[ci * h * w + pos].as_f64();
                let vb = b[ci * h * w + pos].as_f64();
                na += va * va;
                nb += vb * vb;
            }
            let na = na.sqrt() + 1e-10;
            let nb = nb.sqrt() + 1e-10;
            for ci in 0..c {
                let d = a[ci * h * w + pos].as_f64() / na - b[ci * h * w + pos].as_f64() / nb;
                layer += d * d;
            }
        }
        total += layer / (c * h * w) as f64;
    }
    Ok(total / fx.len() as f64)
}
