//! Pairwise evaluation over image directories and report rendering.
//!
//! Directory convention: each pair `<id>` contributes `<id>_vis.png` plus a
//! thermal image — `<id>_thm_reg.png` when present (registered output),
//! otherwise `<id>_thm.png` — and optionally `<id>_gen.png`, a generated
//! thermal used for the distribution-level scores.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::load_gray;
use crate::scalar::Scalar;

use super::{
    edge_map, frechet_distance, mutual_information, ncc, perceptual_distance, ssim,
    FeatureExtractor, FeatureSet, MetricConfig, MetricError, RandomConvExtractor,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScores {
    pub ssim_edges: f64,
    pub ncc_edges: f64,
    pub mutual_info: f64,
    pub lpips_proxy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PairRow {
    pub pair_id: String,
    pub before: PairScores,
    pub after: PairScores,
}

#[derive(Debug, Clone, Copy)]
pub struct Aggregate {
    pub ssim_edges: f64,
    pub ncc_edges: f64,
    pub mutual_info: f64,
    pub fid: Option<f64>,
    pub lpips_proxy: Option<f64>,
}

#[derive(Debug)]
pub struct MetricReport {
    pub pairs: Vec<PairRow>,
    pub before: Aggregate,
    pub after: Aggregate,
    /// Pair ids present on only one side; scored on neither.
    pub unmatched: Vec<String>,
    pub extractor: String,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut acc, mut n) = (0.0, 0usize);
    for v in values {
        acc += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = values.flatten().collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// One directory's pair listing: id -> (vis, thm, optional gen).
fn scan_dir(dir: &Path) -> Result<BTreeMap<String, (PathBuf, PathBuf, Option<PathBuf>)>, MetricError> {
    let entries = std::fs::read_dir(dir).map_err(|_| MetricError::BadDir(dir.to_path_buf()))?;
    let mut names = Vec::new();
    for e in entries {
        let e = e.map_err(|_| MetricError::BadDir(dir.to_path_buf()))?;
        if let Some(name) = e.file_name().to_str() {
            names.push(name.to_string());
        }
    }
    let mut out = BTreeMap::new();
    for name in &names {
        if let Some(id) = name.strip_suffix("_vis.png") {
            let reg = dir.join(format!("{id}_thm_reg.png"));
            let plain = dir.join(format!("{id}_thm.png"));
            let thermal = if reg.is_file() { reg } else { plain };
            if !thermal.is_file() {
                continue; // visible without thermal: reported as unmatched by the caller
            }
            let gen = dir.join(format!("{id}_gen.png"));
            out.insert(
                id.to_string(),
                (dir.join(name), thermal, gen.is_file().then_some(gen)),
            );
        }
    }
    Ok(out)
}

struct DirScores {
    per_pair: BTreeMap<String, PairScores>,
    fid: Option<f64>,
}

fn score_dir<T: Scalar>(
    entries: &BTreeMap<String, (PathBuf, PathBuf, Option<PathBuf>)>,
    ids: &[String],
    cfg: &MetricConfig,
    extractor: &RandomConvExtractor<T>,
) -> Result<DirScores, MetricError> {
    let mut per_pair = BTreeMap::new();
    let mut real_feats: Vec<Vec<f64>> = Vec::new();
    let mut gen_feats: Vec<Vec<f64>> = Vec::new();

    for id in ids {
        let (vis_path, thm_path, gen_path) = &entries[id];
        let vis = load_gray::<T>(vis_path)?;
        let thm = load_gray::<T>(thm_path)?;
        if vis.shape() != thm.shape() {
            return Err(MetricError::ShapeMismatch {
                a: vis.shape().to_vec(),
                b: thm.shape().to_vec(),
            });
        }
        let ev = edge_map(&vis, cfg.edge_radius)?;
        let et = edge_map(&thm, cfg.edge_radius)?;
        let s = ssim(&ev, &et, cfg.ssim_window, cfg.ssim_sigma, cfg.ssim_c1, cfg.ssim_c2)?;
        let c = ncc(&ev, &et)?;
        let mi = mutual_information(&vis, &thm, cfg.mi_bins)?;
        let lpips = match gen_path {
            Some(gp) => {
                let gen = load_gray::<T>(gp)?;
                real_feats.push(extractor.embed(&thm));
                gen_feats.push(extractor.embed(&gen));
                Some(perceptual_distance(&thm, &gen, extractor)?)
            }
            None => None,
        };
        per_pair.insert(
            id.clone(),
            PairScores {
                ssim_edges: s,
                ncc_edges: c.value,
                mutual_info: mi,
                lpips_proxy: lpips,
            },
        );
    }

    let fid = if real_feats.len() >= 2 && gen_feats.len() >= 2 {
        Some(frechet_distance(
            &FeatureSet::from_rows(&real_feats),
            &FeatureSet::from_rows(&gen_feats),
        )?)
    } else {
        None
    };
    Ok(DirScores { per_pair, fid })
}

fn aggregate(scores: &DirScores, ids: &[String]) -> Aggregate {
    Aggregate {
        ssim_edges: mean(ids.iter().map(|id| scores.per_pair[id].ssim_edges)),
        ncc_edges: mean(ids.iter().map(|id| scores.per_pair[id].ncc_edges)),
        mutual_info: mean(ids.iter().map(|id| scores.per_pair[id].mutual_info)),
        fid: scores.fid,
        lpips_proxy: mean_opt(ids.iter().map(|id| scores.per_pair[id].lpips_proxy)),
    }
}

/// Score matched pairs across two directories (typically pre- and
/// post-registration snapshots of the same pairs). Pairs present on only
/// one side are listed in `unmatched` and skipped.
pub fn evaluate_pairs<T: Scalar>(
    before_dir: &Path,
    after_dir: &Path,
    cfg: &MetricConfig,
) -> Result<MetricReport, MetricError> {
    let before_entries = scan_dir(before_dir)?;
    let after_entries = scan_dir(after_dir)?;

    let ids: Vec<String> = before_entries
        .keys()
        .filter(|id| after_entries.contains_key(*id))
        .cloned()
        .collect();
    let mut unmatched: Vec<String> = before_entries
        .keys()
        .filter(|id| !after_entries.contains_key(*id))
        .cloned()
        .collect();
    unmatched.extend(
        after_entries
            .keys()
            .filter(|id| !before_entries.contains_key(*id))
            .cloned(),
    );
    if ids.is_empty() {
        return Err(MetricError::UnmatchedPairs { files: unmatched });
    }

    let extractor = RandomConvExtractor::<T>::new(cfg.feature_seed, cfg.feature_dim);
    let before_scores = score_dir(&before_entries, &ids, cfg, &extractor)?;
    let after_scores = score_dir(&after_entries, &ids, cfg, &extractor)?;

    let pairs: Vec<PairRow> = ids
        .iter()
        .map(|id| PairRow {
            pair_id: id.clone(),
            before: before_scores.per_pair[id],
            after: after_scores.per_pair[id],
        })
        .collect();

    Ok(MetricReport {
        before: aggregate(&before_scores, &ids),
        after: aggregate(&after_scores, &ids),
        pairs,
        unmatched,
        extractor: extractor.describe(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricReport {
    /// CSV: one row per pair and phase, then AGGREGATE rows. FID is a
    /// set-level score and appears only on the aggregate rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair_id,phase,ssim_edges,ncc_edges,mutual_info,fid,lpips_proxy\n");
        for row in &self.pairs {
            for (phase, s) in [("before", &row.before), ("after", &row.after)] {
                out.push_str(&format!(
                    "{},{},{:.6},{:.6},{:.6},,{}\n",
                    row.pair_id, phase, s.ssim_edges, s.ncc_edges, s.mutual_info,
                    fmt_opt(s.lpips_proxy)
                ));
            }
        }
        for (phase, a) in [("before", &self.before), ("after", &self.after)] {
            out.push_str(&format!(
                "AGGREGATE,{},{:.6},{:.6},{:.6},{},{}\n",
                phase,
                a.ssim_edges,
                a.ncc_edges,
                a.mutual_info,
                fmt_opt(a.fid),
                fmt_opt(a.lpips_proxy)
            ));
        }
        out
    }

    /// Percent delta for SSIM/MI/FID/LPIPS, multiplicative factor for NCC.
    fn delta_cells(&self) -> [String; 5] {
        let pct = |b: f64, a: f64| {
            if b.abs() < 1e-12 {
                String::from("n/a")
            } else {
                format!("{:+.1}%", (a - b) / b.abs() * 100.0)
            }
        };
        let factor = if self.before.ncc_edges.abs() < 1e-12 {
            String::from("n/a")
        } else {
            format!("{:.1}x", self.after.ncc_edges / self.before.ncc_edges)
        };
        let opt_pct = |b: Option<f64>, a: Option<f64>| match (b, a) {
            (Some(b), Some(a)) => pct(b, a),
            _ => String::from("n/a"),
        };
        [
            pct(self.before.ssim_edges, self.after.ssim_edges),
            factor,
            pct(self.before.mutual_info, self.after.mutual_info),
            opt_pct(self.before.fid, self.after.fid),
            opt_pct(self.before.lpips_proxy, self.after.lpips_proxy),
        ]
    }

    /// Human-readable table: Before/After rows, one column per metric, the
    /// After row annotated with deltas.
    pub fn to_table(&self) -> String {
        let d = self.delta_cells();
        let cell = |v: f64| format!("{v:.3}");
        let opt_cell = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into());
        let header = [
            "",
            "SSIM Edges (↑)",
            "NCC Edges (↑)",
            "Mut. Info. (↑)",
            "FID (↓)",
            "LPIPS (↓)",
        ];
        let before = [
            "Before Reg.".to_string(),
            cell(self.before.ssim_edges),
            cell(self.before.ncc_edges),
            cell(self.before.mutual_info),
            opt_cell(self.before.fid),
            opt_cell(self.before.lpips_proxy),
        ];
        let after = [
            "After Reg.".to_string(),
            format!("{} ({})", cell(self.after.ssim_edges), d[0]),
            format!("{} ({})", cell(self.after.ncc_edges), d[1]),
            format!("{} ({})", cell(self.after.mutual_info), d[2]),
            format!("{} ({})", opt_cell(self.after.fid), d[3]),
            format!("{} ({})", opt_cell(self.after.lpips_proxy), d[4]),
        ];

        let mut widths = [0usize; 6];
        for (i, h) in header.iter().enumerate() {
            widths[i] = h.chars().count();
        }
        for row in [&before, &after] {
            for (i, c) in row.iter().enumerate() {
                widths[i] = widths[i].max(c.chars().count());
            }
        }
        let mut out = String::new();
        let pad = |s: &str, w: usize| {
            let mut t = s.to_string();
            while t.chars().count() < w {
                t.push(' ');
            }
            t
        };
        for (i, h) in header.iter().enumerate() {
            out.push_str(&pad(h, widths[i]));
            out.push_str("  ");
        }
        out.push('\n');
        for row in [&before, &after] {
            for (i, c) in row.iter().enumerate() {
                out.push_str(&pad(c, widths[i]));
                out.push_str("  ");
            }
            out.push('\n');
        }
        out.push_str(&format!("feature extractor: {}\n", self.extractor));
        out
    }
}
