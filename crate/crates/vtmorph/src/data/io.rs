//! 8-bit grayscale PNG ⇄ [0, 1] tensor.

use std::path::Path;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::DataError;

/// Load an 8-bit grayscale PNG as an H×W tensor in [0, 1].
pub fn load_gray<T: Scalar>(path: &Path) -> Result<Tensor<T>, DataError> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => DataError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => DataError::BadImage {
            path: path.to_path_buf(),
            msg: other.to_string(),
        },
    })?;
    let image::DynamicImage::ImageLuma8(gray) = img else {
        return Err(DataError::NotGrayscale {
            path: path.to_path_buf(),
        });
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data: Vec<T> = gray
        .into_raw()
        .into_iter()
        .map(|v| T::from_f64(v as f64 / 255.0))
        .collect();
    Ok(Tensor::new(data, &[h, w]))
}

/// Write an H×W tensor in [0, 1] as an 8-bit grayscale PNG (values are
/// clamped, then rounded to the nearest of 256 levels).
pub fn save_gray<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<(), DataError> {
    let shape = img.shape();
    assert_eq!(shape.len(), 2, "save_gray: image must be H×W, got {shape:?}");
    let (h, w) = (shape[0], shape[1]);
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(w as u32, h as u32, bytes)
        .expect("raw buffer length matches dimensions");
    buf.save(path).map_err(|e| DataError::BadImage {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Quantize to the 8-bit grid without touching the filesystem; matches what
/// a save/load round trip produces.
pub fn quantize8<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    let data: Vec<T> = img
        .data()
        .iter()
        .map(|v| T::from_f64((v.as_f64().clamp(0.0, 1.0) * 255.0).round() / 255.0))
        .collect();
    Tensor::new(data, img.shape())
}
