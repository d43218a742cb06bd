//! Morphological gradient: dilation minus erosion with a square element.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::MetricError;

/// Edge map of a grayscale H×W image: max-filter minus min-filter over a
/// (2·radius+1)² neighborhood clipped at the borders. Nonnegative.
pub fn edge_map<T: Scalar>(img: &Tensor<T>, radius: usize) -> Result<Tensor<T>, MetricError> {
    if radius < 1 {
        return Err(MetricError::BadRadius(radius));
    }
    let shape = img.shape().to_vec();
    assert_eq!(shape.len(), 2, "edge_map: image must be H×W, got {shape:?}");
    let (h, w) = (shape[0], shape[1]);
    let src = img.to_vec();
    let r = radius as isize;

    let mut out = vec![T::zero(); h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut lo = T::infinity();
            let mut hi = T::neg_infinity();
            for dy in -r..=r {
                let yy = y + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let xx = x + dx;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let v = src[yy as usize * w + xx as usize];
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            out[y as usize * w + x as usize] = hi - lo;
        }
    }
    Ok(Tensor::new(out, &shape))
}
