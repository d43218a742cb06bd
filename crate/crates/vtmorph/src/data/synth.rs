//! Synthetic paired-warp corpus: procedural faces, a pseudo-thermal
//! appearance transform, and warps with recorded ground truth.
//!
//! The pseudo-thermal transform (inversion + blur + contrast remap, masked
//! to the face support so the background stays black) opens a deliberate
//! appearance gap: direct intensity comparison across the pair fails, which
//! is exactly the condition the cross-spectrum casting networks exist for.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::stn::{theta_tensor, warp, AffineParams};
use crate::tensor::{no_grad, Tensor};

use super::manifest::{split_subjects, ImagePair, Manifest, Split};
use super::{derive_seed, save_gray, DataError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    /// Max |tx|, |ty| in normalized units.
    pub max_translation: f64,
    pub max_rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_shear: f64,
    pub blur_sigma: f64,
    /// Minimum fraction of the face mass that must stay in frame.
    pub min_coverage: f64,
    pub max_retries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            max_translation: 0.25,
            max_rotation_deg: 15.0,
            scale_min: 0.85,
            scale_max: 1.15,
            max_shear: 0.1,
            blur_sigma: 1.5,
            min_coverage: 0.6,
            max_retries: 32,
        }
    }
}

impl SynthConfig {
    /// Shrink every range toward the identity by `factor` in [0, 1].
    pub fn scaled(&self, factor: f64) -> Self {
        SynthConfig {
            max_translation: self.max_translation * factor,
            max_rotation_deg: self.max_rotation_deg * factor,
            scale_min: 1.0 + (self.scale_min - 1.0) * factor,
            scale_max: 1.0 + (self.scale_max - 1.0) * factor,
            max_shear: self.max_shear * factor,
            ..*self
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Draw warp parameters: translation ∘ rotation ∘ scale ∘ shear.
pub fn sample_params(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> AffineParams<f64> {
    let t = uniform(rng, -cfg.max_translation, cfg.max_translation);
    let t2 = uniform(rng, -cfg.max_translation, cfg.max_translation);
    let rot = uniform(rng, -cfg.max_rotation_deg, cfg.max_rotation_deg).to_radians();
    let s = uniform(rng, cfg.scale_min, cfg.scale_max);
    let kx = uniform(rng, -cfg.max_shear, cfg.max_shear);
    let ky = uniform(rng, -cfg.max_shear, cfg.max_shear);
    AffineParams::translation(t, t2)
        .compose(&AffineParams::rotation(rot))
        .compose(&AffineParams::scaling(s, s))
        .compose(&AffineParams::shear(kx, ky))
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with replicated borders.
fn gaussian_blur<T: Scalar>(img: &Tensor<T>, sigma: f64) -> Tensor<T> {
    let shape = img.shape().to_vec();
    let (h, w) = (shape[0], shape[1]);
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let src = img.to_vec();

    let mut tmp = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sx = (x as i64 + ki as i64 - radius).clamp(0, w as i64 - 1) as usize;
                acc += src[y * w + sx].as_f64() * kv;
            }
            tmp[y * w + x] = T::from_f64(acc);
        }
    }
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sy = (y as i64 + ki as i64 - radius).clamp(0, h as i64 - 1) as usize;
                acc += tmp[sy * w + x].as_f64() * kv;
            }
            out[y * w + x] = T::from_f64(acc);
        }
    }
    Tensor::new(out, &shape)
}

const FG_CUTOFF: f64 = 0.02;

/// Fixed cross-spectrum appearance transform: invert intensities, blur,
/// apply a seeded mild contrast remap, and re-mask to the face support so
/// the background stays exactly zero.
pub fn pseudo_thermal<T: Scalar>(img: &Tensor<T>, style_seed: u64, blur_sigma: f64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(style_seed);
    let gamma = rng.gen_range(0.9..1.1);
    let gain = rng.gen_range(0.9..1.1);
    let bias = rng.gen_range(-0.05..0.05);

    let cutoff = T::from_f64(FG_CUTOFF);
    let inverted: Vec<T> = img
        .data()
        .iter()
        .map(|v| if *v > cutoff { T::one() - *v } else { T::zero() })
        .collect();
    let blurred = gaussian_blur(&Tensor::new(inverted, img.shape()), blur_sigma);
    let out: Vec<T> = blurred
        .data()
        .iter()
        .zip(img.data().iter())
        .map(|(v, orig)| {
            if *orig > cutoff {
                T::from_f64((gain * v.as_f64().max(0.0).powf(gamma) + bias).clamp(0.0, 1.0))
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::new(out, img.shape())
}

fn as_batch<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    let s = img.shape();
    img.reshape(&[1, 1, s[0], s[1]])
}

fn from_batch<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    let s = img.shape();
    img.reshape(&[s[2], s[3]])
}

fn warp_image<T: Scalar>(img: &Tensor<T>, params: &AffineParams<f64>) -> Tensor<T> {
    let arr = params.to_array().map(T::from_f64);
    let theta = theta_tensor(&[AffineParams::from_array(arr)]);
    no_grad(|| from_batch(&warp(&as_batch(img), &theta)))
}

/// One synthetic pair from a base image: the visible side is the base, the
/// thermal side is the pseudo-thermal rendering warped by a sampled θ that
/// keeps at least `min_coverage` of the face in frame. Deterministic in
/// (base, seed). Returns (visible, thermal, θ).
pub fn synth_pair<T: Scalar>(
    base: &Tensor<T>,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<(Tensor<T>, Tensor<T>, AffineParams<f64>), DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thermal_base = pseudo_thermal(base, derive_seed(seed, 0xface), cfg.blur_sigma);

    let cutoff = T::from_f64(FG_CUTOFF);
    let mask: Vec<T> = base
        .data()
        .iter()
        .map(|v| if *v > cutoff { T::one() } else { T::zero() })
        .collect();
    let mask = Tensor::new(mask, base.shape());
    let mask_total: f64 = mask.data().iter().map(|v| v.as_f64()).sum();

    for _ in 0..cfg.max_retries.max(1) {
        let theta = sample_params(&mut rng, cfg);
        let kept: f64 = warp_image(&mask, &theta)
            .data()
            .iter()
            .map(|v| v.as_f64())
            .sum();
        // scale changes area; measure retained mass against the warped total
        let coverage = if mask_total > 0.0 { kept / mask_total * theta.det().abs() } else { 1.0 };
        if coverage + 1e-9 >= cfg.min_coverage {
            let thermal = warp_image(&thermal_base, &theta);
            return Ok((base.clone(), thermal, theta));
        }
    }
    Err(DataError::WarpRetriesExhausted(cfg.min_coverage * 100.0))
}

/// Seeded face-like grayscale image: elliptical head with a radial shading
/// ramp and a seeded texture, darker eyes, brows and mouth, brighter nose
/// ridge, black background. Enough edge structure for alignment signal.
pub fn procedural_face<T: Scalar>(seed: u64, size: usize) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cx = 0.5 + rng.gen_range(-0.03..0.03);
    let cy = 0.5 + rng.gen_range(-0.03..0.03);
    let rx: f64 = 0.30 + rng.gen_range(-0.04..0.04);
    let ry = 0.40 + rng.gen_range(-0.04..0.04);
    let eye_dx = 0.13 + rng.gen_range(-0.02..0.02);
    let eye_dy = -0.11 + rng.gen_range(-0.02..0.02);
    let eye_r = 0.050 + rng.gen_range(-0.008..0.008);
    let mouth_dy = 0.20 + rng.gen_range(-0.03..0.03);
    let mouth_rx = 0.13 + rng.gen_range(-0.02..0.02);
    let tex_fx = rng.gen_range(6.0..14.0);
    let tex_fy = rng.gen_range(6.0..14.0);
    let tex_px = rng.gen_range(0.0..std::f64::consts::TAU);
    let tex_py = rng.gen_range(0.0..std::f64::consts::TAU);
    let base_level = 0.55 + rng.gen_range(-0.05..0.05);

    // soft-edged ellipse membership: 1 inside, 0 outside, ~1px falloff
    let soft = |d2: f64, edge: f64| ((1.0 - d2) / edge).clamp(0.0, 1.0);
    let px_edge = 2.0 / size as f64 / rx.min(ry); // ≈ one pixel in ellipse units

    let mut data = vec![T::zero(); size * size];
    for i in 0..size {
        let y = (i as f64 + 0.5) / size as f64;
        for j in 0..size {
            let x = (j as f64 + 0.5) / size as f64;
            let ex = (x - cx) / rx;
            let ey = (y - cy) / ry;
            let rho2 = ex * ex + ey * ey;
            let face = soft(rho2, px_edge * 4.0);
            if face <= 0.0 {
                continue;
            }
            let mut v = base_level + 0.30 * (1.0 - rho2).max(0.0);
            v += 0.04 * (tex_fx * x + tex_px).sin() * (tex_fy * y + tex_py).sin();

            // features, drawn in face-relative coordinates
            let feat = |fx: f64, fy: f64, frx: f64, fry: f64| -> f64 {
                let dx = (x - cx - fx) / frx;
                let dy = (y - cy - fy) / fry;
                soft(dx * dx + dy * dy, 0.35)
            };
            let eye_l = feat(-eye_dx, eye_dy, eye_r, eye_r * 0.7);
            let eye_r_ = feat(eye_dx, eye_dy, eye_r, eye_r * 0.7);
            let brow_l = feat(-eye_dx, eye_dy - 0.07, eye_r * 1.3, eye_r * 0.3);
            let brow_r = feat(eye_dx, eye_dy - 0.07, eye_r * 1.3, eye_r * 0.3);
            let nose = feat(0.0, 0.05, 0.030, 0.10);
            let mouth = feat(0.0, mouth_dy, mouth_rx, 0.030);

            v = v * (1.0 - 0.75 * eye_l.max(eye_r_)) // dark eyes
                * (1.0 - 0.55 * brow_l.max(brow_r)) // dark brows
                * (1.0 - 0.60 * mouth); // dark mouth
            v += 0.12 * nose; // bright ridge
            v *= face; // soften the head rim
            data[i * size + j] = T::from_f64(v.clamp(0.0, 1.0));
        }
    }
    Tensor::new(data, &[size, size])
}

/// Generate `n` pairs over the given (subject, base image) set, write PNGs
/// and a manifest into `out_dir`, split subject-disjointly, and return the
/// manifest (paths are relative to `out_dir`).
pub fn synthesize_corpus<T: Scalar>(
    out_dir: &Path,
    bases: &[(String, Tensor<T>)],
    n: usize,
    cfg: &SynthConfig,
    seed: u64,
    test_fraction: f64,
) -> Result<Manifest, DataError> {
    assert!(!bases.is_empty(), "synthesize_corpus: no base images");
    std::fs::create_dir_all(out_dir).map_err(|source| DataError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let (subject, base) = &bases[i % bases.len()];
        let pair_id = format!("p{i:05}");
        let (vis, thm, theta) = synth_pair(base, cfg, derive_seed(seed, i as u64))?;
        let vis_name = format!("{pair_id}_vis.png");
        let thm_name = format!("{pair_id}_thm.png");
        save_gray(&out_dir.join(&vis_name), &vis)?;
        save_gray(&out_dir.join(&thm_name), &thm)?;
        pairs.push(ImagePair {
            pair_id,
            subject_id: subject.clone(),
            visible_path: out_dir.join(vis_name),
            thermal_path: out_dir.join(thm_name),
            split: Split::Train,
            pain_class: None,
            theta_true: Some(theta.to_array()),
        });
    }
    split_subjects(pairs, test_fraction, seed)
}
