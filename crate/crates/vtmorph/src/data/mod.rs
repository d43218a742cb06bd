//! Dataset ingestion: manifests with subject-disjoint splits, thermal
//! background cropping, grayscale PNG IO, and the synthetic paired-warp
//! generator used for quantitative verification.

use std::path::PathBuf;

mod crop;
mod io;
mod manifest;
mod synth;

pub use crop::{otsu_threshold, threshold_crop};
pub use io::{load_gray, quantize8, save_gray};
pub use manifest::{load_manifest, save_manifest, split_subjects, ImagePair, Manifest, Split};
pub use synth::{
    procedural_face, pseudo_thermal, sample_params, synthesize_corpus, SynthConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot decode image {path}: {msg}")]
    BadImage { path: PathBuf, msg: String },
    #[error("{path} is not an 8-bit grayscale image")]
    NotGrayscale { path: PathBuf },
    #[error("manifest line {line}: {msg}")]
    BadManifest { line: usize, msg: String },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("subjects appear in both splits: {}", subjects.join(", "))]
    SubjectOverlap { subjects: Vec<String> },
    #[error("missing files referenced by manifest: {}", paths.join(", "))]
    MissingFiles { paths: Vec<String> },
    #[error("need at least 2 subjects to split, got {0}")]
    TooFewSubjects(usize),
    #[error("test fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("threshold must lie in [0, 1], got {0}")]
    BadThreshold(f64),
    #[error(
        "no foreground component of at least {min_component} px at threshold {threshold}; \
         Otsu suggests {otsu_suggestion:.4}"
    )]
    EmptyForeground {
        threshold: f64,
        min_component: usize,
        otsu_suggestion: f64,
    },
    #[error("could not sample a warp keeping ≥ {0:.0}% of the face in frame")]
    WarpRetriesExhausted(f64),
    #[error("no base images found in {0}")]
    EmptyBaseDir(PathBuf),
    #[error("pair {pair_id}: image sizes differ: {a:?} vs {b:?}")]
    PairSizeMismatch {
        pair_id: String,
        a: Vec<usize>,
        b: Vec<usize>,
    },
}

/// Seed for item `index` derived from a master seed (splitmix64 step), so
/// per-item generation is order-independent and reproducible.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e3779b97f4a7c15_u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
