//! Batch registration over a frozen model.

use std::path::{Path, PathBuf};

use crate::data::{load_gray, quantize8, save_gray, ImagePair};
use crate::metrics::{
    edge_map, mutual_information, ncc, ssim, MetricConfig, PairScores,
};
use crate::scalar::Scalar;
use crate::stn::{theta_from_tensor, AffineParams};
use crate::tensor::{no_grad, Tensor};

use super::{to_signed, RegistrationModel, TrainError};

#[derive(Debug, Clone, Copy)]
pub struct RegisterOptions {
    /// Skip pairs that fail (size mismatch, unreadable) instead of aborting.
    pub continue_on_error: bool,
}

impl Default for RegisterOptions {
    fn default() -> Self {
        RegisterOptions {
            continue_on_error: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub pair_id: String,
    pub theta: AffineParams<f64>,
    pub before: PairScores,
    pub after: PairScores,
    pub registered_path: PathBuf,
}

impl RegistrationResult {
    pub const CSV_HEADER: &'static str = "pair_id,a,b,tx,c,d,ty,\
        ssim_edges_before,ssim_edges_after,ncc_edges_before,ncc_edges_after,\
        mutual_info_before,mutual_info_after";

    pub fn to_csv_row(&self) -> String {
        let t = self.theta.to_array();
        format!(
            "{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.pair_id,
            t[0],
            t[1],
            t[2],
            t[3],
            t[4],
            t[5],
            self.before.ssim_edges,
            self.after.ssim_edges,
            self.before.ncc_edges,
            self.after.ncc_edges,
            self.before.mutual_info,
            self.after.mutual_info,
        )
    }
}

fn score_pair<T: Scalar>(
    vis: &Tensor<T>,
    thm: &Tensor<T>,
    cfg: &MetricConfig,
) -> Result<PairScores, TrainError> {
    let err = |e: crate::metrics::MetricError| {
        TrainError::Io {
            path: PathBuf::from("<metrics>"),
            source: std::io::Error::other(e.to_string()),
        }
    };
    let ev = edge_map(vis, cfg.edge_radius).map_err(err)?;
    let et = edge_map(thm, cfg.edge_radius).map_err(err)?;
    Ok(PairScores {
        ssim_edges: ssim(&ev, &et, cfg.ssim_window, cfg.ssim_sigma, cfg.ssim_c1, cfg.ssim_c2)
            .map_err(err)?,
        ncc_edges: ncc(&ev, &et).map_err(err)?.value,
        mutual_info: mutual_information(vis, thm, cfg.mi_bins).map_err(err)?,
        lpips_proxy: None,
    })
}

/// Register every pair with a frozen model: predict θ from (A, Â₁), warp B,
/// write `<id>_thm_reg.png` (plus an unmodified `<id>_vis.png` copy so the
/// output directory is self-contained), and score alignment before/after.
pub fn register_batch<T: Scalar>(
    model: &RegistrationModel<T>,
    pairs: &[&ImagePair],
    out_dir: &Path,
    metric_cfg: &MetricConfig,
    options: RegisterOptions,
) -> Result<Vec<RegistrationResult>, TrainError> {
    std::fs::create_dir_all(out_dir).map_err(|source| TrainError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let size = model.config.image_size;

    let mut results = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let run = || -> Result<RegistrationResult, TrainError> {
            let vis01 = load_gray::<T>(&pair.visible_path).map_err(TrainError::Data)?;
            let thm01 = load_gray::<T>(&pair.thermal_path).map_err(TrainError::Data)?;
            for img in [&vis01, &thm01] {
                if img.shape() != [size, size] {
                    return Err(TrainError::ImageSize {
                        pair_id: pair.pair_id.clone(),
                        got: img.shape().to_vec(),
                        expect: size,
                    });
                }
            }

            let (theta, b_r01) = no_grad(|| {
                let a01 = vis01.reshape(&[1, 1, size, size]);
                let b01 = thm01.reshape(&[1, 1, size, size]);
                let a = to_signed(&a01);
                let b = to_signed(&b01);
                let a1_hat = model.flow2_t2v(&b);
                model.flow3_register(&a, &a1_hat, &b01)
            });
            let b_r01 = b_r01.reshape(&[size, size]);
            let theta_params = theta_from_tensor(&theta)[0];
            let theta64 = AffineParams::from_array(theta_params.to_array().map(|v| v.as_f64()));

            let reg_path = out_dir.join(format!("{}_thm_reg.png", pair.pair_id));
            save_gray(&reg_path, &quantize8(&b_r01)).map_err(TrainError::Data)?;
            save_gray(
                &out_dir.join(format!("{}_vis.png", pair.pair_id)),
                &quantize8(&vis01),
            )
            .map_err(TrainError::Data)?;

            Ok(RegistrationResult {
                pair_id: pair.pair_id.clone(),
                theta: theta64,
                before: score_pair(&vis01, &thm01, metric_cfg)?,
                after: score_pair(&vis01, &b_r01, metric_cfg)?,
                registered_path: reg_path,
            })
        };
        match run() {
            Ok(r) => results.push(r),
            Err(e) if options.continue_on_error => {
                eprintln!("skipping pair {}: {e}", pair.pair_id);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(results)
}

/// Write the per-pair results file: one line per pair with θ and scores.
pub fn write_results_csv(path: &Path, results: &[RegistrationResult]) -> Result<(), TrainError> {
    let mut out = String::from(RegistrationResult::CSV_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}
