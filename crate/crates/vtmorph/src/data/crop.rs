//! Thermal background removal: binarize, keep the largest connected
//! component, zero the rest, crop to its bounding box, resize back.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::DataError;

/// Otsu's threshold over a 256-bin histogram, in [0, 1].
pub fn otsu_threshold<T: Scalar>(img: &Tensor<T>) -> f64 {
    let mut hist = [0u64; 256];
    for v in img.data().iter() {
        let b = (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as usize;
        hist[b.min(255)] += 1;
    }
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut best = (0usize, 0.0f64);
    let (mut w0, mut sum0) = (0u64, 0.0f64);
    for t in 0..256 {
        w0 += hist[t];
        if w0 == 0 {
            continue;
        }
        let w1 = total - w0;
        if w1 == 0 {
            break;
        }
        sum0 += t as f64 * hist[t] as f64;
        let mu0 = sum0 / w0 as f64;
        let mu1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (mu0 - mu1) * (mu0 - mu1);
        if between > best.1 {
            best = (t, between);
        }
    }
    (best.0 as f64 + 0.5) / 255.0
}

/// 8-connected component labels over a boolean mask; label 0 is background.
fn connected_components(mask: &[bool], h: usize, w: usize) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; h * w];
    let mut sizes = vec![0usize]; // sizes[0] unused
    let mut stack = Vec::new();
    let mut next = 1u32;
    for start in 0..h * w {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let label = next;
        next += 1;
        sizes.push(0);
        stack.push(start);
        labels[start] = label;
        while let Some(at) = stack.pop() {
            sizes[label as usize] += 1;
            let (y, x) = (at / w, at % w);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    if mask[n] && labels[n] == 0 {
                        labels[n] = label;
                        stack.push(n);
                    }
                }
            }
        }
    }
    (labels, sizes)
}

/// Nearest-neighbor resize (value-preserving, so the crop is idempotent).
fn resize_nearest<T: Scalar>(src: &[T], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); dh * dw];
    for i in 0..dh {
        let sy = ((i as f64 + 0.5) * sh as f64 / dh as f64).floor() as usize;
        let sy = sy.min(sh - 1);
        for j in 0..dw {
            let sx = ((j as f64 + 0.5) * sw as f64 / dw as f64).floor() as usize;
            let sx = sx.min(sw - 1);
            out[i * dw + j] = src[sy * sw + sx];
        }
    }
    out
}

/// Binarize at `threshold`, keep the largest foreground component of at
/// least `min_component` pixels, zero everything else, crop to the
/// component's bounding box, and resize back to the input extent.
pub fn threshold_crop<T: Scalar>(
    img: &Tensor<T>,
    threshold: f64,
    min_component: usize,
) -> Result<Tensor<T>, DataError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(DataError::BadThreshold(threshold));
    }
    let shape = img.shape().to_vec();
    assert_eq!(shape.len(), 2, "threshold_crop: image must be H×W, got {shape:?}");
    let (h, w) = (shape[0], shape[1]);
    let data = img.to_vec();
    let thr = T::from_f64(threshold);
    let mask: Vec<bool> = data.iter().map(|v| *v >= thr).collect();

    let (labels, sizes) = connected_components(&mask, h, w);
    let largest = sizes
        .iter()
        .enumerate()
        .skip(1)
        .max_by_key(|(_, &s)| s)
        .map(|(label, &s)| (label as u32, s));
    let Some((label, size)) = largest.filter(|&(_, s)| s >= min_component.max(1)) else {
        return Err(DataError::EmptyForeground {
            threshold,
            min_component,
            otsu_suggestion: otsu_threshold(img),
        });
    };
    let _ = size;

    // zero background, track bounding box
    let mut masked = vec![T::zero(); h * w];
    let (mut y0, mut y1, mut x0, mut x1) = (h, 0usize, w, 0usize);
    for y in 0..h {
        for x in 0..w {
            if labels[y * w + x] == label {
                masked[y * w + x] = data[y * w + x];
                y0 = y0.min(y);
                y1 = y1.max(y);
                x0 = x0.min(x);
                x1 = x1.max(x);
            }
        }
    }

    let (ch, cw) = (y1 - y0 + 1, x1 - x0 + 1);
    let mut cropped = vec![T::zero(); ch * cw];
    for y in 0..ch {
        cropped[y * cw..(y + 1) * cw]
            .copy_from_slice(&masked[(y0 + y) * w + x0..(y0 + y) * w + x0 + cw]);
    }
    let resized = resize_nearest(&cropped, ch, cw, h, w);
    Ok(Tensor::new(resized, &[h, w]))
}
