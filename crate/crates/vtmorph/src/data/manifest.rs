//! Pair manifests: CSV schema, validation, subject-disjoint splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DataError;

pub const MANIFEST_HEADER: &str =
    "pair_id,subject_id,visible_path,thermal_path,split,pain_class,theta_true";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImagePair {
    pub pair_id: String,
    pub subject_id: String,
    pub visible_path: PathBuf,
    pub thermal_path: PathBuf,
    pub split: Split,
    /// Reported pain class 1–4, when labeled.
    pub pain_class: Option<u8>,
    /// Ground-truth generation warp, synthetic pairs only.
    pub theta_true: Option<[f64; 6]>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub pairs: Vec<ImagePair>,
}

impl Manifest {
    pub fn new(pairs: Vec<ImagePair>) -> Result<Self, DataError> {
        let m = Manifest { pairs };
        m.validate()?;
        Ok(m)
    }

    pub fn train(&self) -> Vec<&ImagePair> {
        self.pairs.iter().filter(|p| p.split == Split::Train).collect()
    }

    pub fn test(&self) -> Vec<&ImagePair> {
        self.pairs.iter().filter(|p| p.split == Split::Test).collect()
    }

    /// Split-tag and subject-disjointness invariants (no filesystem access).
    pub fn validate(&self) -> Result<(), DataError> {
        if self.pairs.is_empty() {
            return Err(DataError::EmptyManifest);
        }
        let mut train_subjects = BTreeSet::new();
        let mut test_subjects = BTreeSet::new();
        for p in &self.pairs {
            match p.split {
                Split::Train => train_subjects.insert(p.subject_id.clone()),
                Split::Test => test_subjects.insert(p.subject_id.clone()),
            };
        }
        let overlap: Vec<String> = train_subjects.intersection(&test_subjects).cloned().collect();
        if !overlap.is_empty() {
            return Err(DataError::SubjectOverlap { subjects: overlap });
        }
        Ok(())
    }

    /// Check that every referenced image exists.
    pub fn validate_files(&self) -> Result<(), DataError> {
        let mut missing = Vec::new();
        for p in &self.pairs {
            for path in [&p.visible_path, &p.thermal_path] {
                if !path.is_file() {
                    missing.push(path.display().to_string());
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(DataError::MissingFiles { paths: missing })
        }
    }
}

fn parse_theta(field: &str, line: usize) -> Result<Option<[f64; 6]>, DataError> {
    if field.trim().is_empty() {
        return Ok(None);
    }
    let vals: Vec<f64> = field
        .split_whitespace()
        .map(|s| {
            s.parse::<f64>().map_err(|_| DataError::BadManifest {
                line,
                msg: format!("theta_true component {s:?} is not a number"),
            })
        })
        .collect::<Result<_, _>>()?;
    if vals.len() != 6 {
        return Err(DataError::BadManifest {
            line,
            msg: format!("theta_true needs 6 values, got {}", vals.len()),
        });
    }
    Ok(Some([vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]]))
}

/// Parse and validate a manifest CSV. `check_files` additionally requires
/// every referenced image to exist.
pub fn load_manifest(path: &Path, check_files: bool) -> Result<Manifest, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => DataError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => DataError::BadManifest {
                line: 0,
                msg: e.to_string(),
            },
        })?;

    let headers = reader
        .headers()
        .map_err(|e| DataError::BadManifest {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let expected: Vec<&str> = MANIFEST_HEADER.split(',').collect();
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(DataError::BadManifest {
            line: 1,
            msg: format!("header must be {MANIFEST_HEADER:?}, got {:?}", got.join(",")),
        });
    }

    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut pairs = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record.map_err(|e| DataError::BadManifest {
            line,
            msg: e.to_string(),
        })?;
        if record.len() != 7 {
            return Err(DataError::BadManifest {
                line,
                msg: format!("expected 7 fields, got {}", record.len()),
            });
        }
        let field = |k: usize| record.get(k).unwrap_or("").trim().to_string();
        let split = match field(4).as_str() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(DataError::BadManifest {
                    line,
                    msg: format!("split must be train or test, got {other:?}"),
                })
            }
        };
        let pain_class = match field(5).as_str() {
            "" => None,
            s => {
                let v: u8 = s.parse().map_err(|_| DataError::BadManifest {
                    line,
                    msg: format!("pain_class {s:?} is not an integer"),
                })?;
                if !(1..=4).contains(&v) {
                    return Err(DataError::BadManifest {
                        line,
                        msg: format!("pain_class must lie in 1..=4, got {v}"),
                    });
                }
                Some(v)
            }
        };
        // relative paths resolve against the manifest location
        let resolve = |s: String| {
            let p = PathBuf::from(s);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        pairs.push(ImagePair {
            pair_id: field(0),
            subject_id: field(1),
            visible_path: resolve(field(2)),
            thermal_path: resolve(field(3)),
            split,
            pain_class,
            theta_true: parse_theta(&field(6), line)?,
        });
    }

    let manifest = Manifest::new(pairs)?;
    if check_files {
        manifest.validate_files()?;
    }
    Ok(manifest)
}

/// Write a manifest CSV. Image paths under the manifest's own directory are
/// written relative to it (the loader resolves them back), so a corpus
/// directory is relocatable. θ components use the shortest representation
/// that parses back to the identical float.
pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<(), DataError> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let relativize = |p: &Path| {
        p.strip_prefix(base).unwrap_or(p).display().to_string()
    };
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for p in &manifest.pairs {
        let theta = match &p.theta_true {
            Some(t) => t.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
            None => String::new(),
        };
        let pain = p.pain_class.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.pair_id,
            p.subject_id,
            relativize(&p.visible_path),
            relativize(&p.thermal_path),
            p.split.as_str(),
            pain,
            theta
        ));
    }
    std::fs::write(path, out).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Re-split pairs at subject granularity: every pair of a subject lands on
/// one side. Deterministic under `seed`.
pub fn split_subjects(
    pairs: Vec<ImagePair>,
    test_fraction: f64,
    seed: u64,
) -> Result<Manifest, DataError> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
        return Err(DataError::BadFraction(test_fraction));
    }
    let mut by_subject: BTreeMap<String, Vec<ImagePair>> = BTreeMap::new();
    for p in pairs {
        by_subject.entry(p.subject_id.clone()).or_default().push(p);
    }
    let n = by_subject.len();
    if n < 2 {
        return Err(DataError::TooFewSubjects(n));
    }
    let mut subjects: Vec<String> = by_subject.keys().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    subjects.shuffle(&mut rng);
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let test_set: BTreeSet<String> = subjects.into_iter().take(n_test).collect();

    let mut out = Vec::new();
    for (subject, mut ps) in by_subject {
        let split = if test_set.contains(&subject) {
            Split::Test
        } else {
            Split::Train
        };
        for p in &mut ps {
            p.split = split;
        }
        out.extend(ps);
    }
    Manifest::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: &str, subject: &str, split: Split) -> ImagePair {
        ImagePair {
            pair_id: id.into(),
            subject_id: subject.into(),
            visible_path: format!("{id}_vis.png").into(),
            thermal_path: format!("{id}_thm.png").into(),
            split,
            pain_class: None,
            theta_true: None,
        }
    }

    #[test]
    fn overlapping_subject_rejected_by_name() {
        let pairs = vec![
            pair("p0", "S1", Split::Train),
            pair("p1", "S1", Split::Test),
            pair("p2", "S2", Split::Train),
        ];
        match Manifest::new(pairs) {
            Err(DataError::SubjectOverlap { subjects }) => assert_eq!(subjects, vec!["S1"]),
            other => panic!("expected SubjectOverlap, got {other:?}"),
        }
    }

    #[test]
    fn empty_manifest_rejected() {
        match Manifest::new(Vec::new()) {
            Err(DataError::EmptyManifest) => {}
            other => panic!("expected EmptyManifest, got {other:?}"),
        }
    }

    #[test]
    fn split_ten_subjects_fraction_point_two_gives_two_test() {
        let pairs: Vec<ImagePair> = (0..30)
            .map(|i| pair(&format!("p{i}"), &format!("S{}", i % 10), Split::Train))
            .collect();
        let m = split_subjects(pairs, 0.2, 7).unwrap();
        let test_subjects: BTreeSet<_> = m.test().iter().map(|p| p.subject_id.clone()).collect();
        assert_eq!(test_subjects.len(), 2);
        // all pairs of a test subject are in test
        for p in &m.pairs {
            let in_test = test_subjects.contains(&p.subject_id);
            assert_eq!(p.split == Split::Test, in_test);
        }
        assert_eq!(m.pairs.len(), 30);
    }

    #[test]
    fn split_is_deterministic_under_seed() {
        let mk = || -> Vec<ImagePair> {
            (0..12)
                .map(|i| pair(&format!("p{i}"), &format!("S{}", i % 6), Split::Train))
                .collect()
        };
        let a = split_subjects(mk(), 0.3, 99).unwrap();
        let b = split_subjects(mk(), 0.3, 99).unwrap();
        for (x, y) in a.pairs.iter().zip(&b.pairs) {
            assert_eq!(x.split == Split::Test, y.split == Split::Test);
        }
    }

    #[test]
    fn manifest_round_trip_preserves_theta_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let theta = [1.0000001, -0.3333333333333333, 0.1, 0.0, 0.9999999, 2e-17];
        let mut p = pair("p0", "S1", Split::Train);
        p.theta_true = Some(theta);
        p.pain_class = Some(3);
        let mut q = pair("p1", "S2", Split::Test);
        q.theta_true = None;
        let m = Manifest::new(vec![p, q]).unwrap();
        save_manifest(&path, &m).unwrap();
        let back = load_manifest(&path, false).unwrap();
        assert_eq!(back.pairs[0].theta_true.unwrap(), theta);
        assert_eq!(back.pairs[0].pain_class, Some(3));
        assert!(back.pairs[1].theta_true.is_none());
        assert!(back.pairs[1].pain_class.is_none());
    }

    #[test]
    fn large_row_counts_accepted_as_metadata() {
        // full-scale row counts (22570 train / 6891 test) validate without
        // touching the filesystem
        let mut pairs = Vec::new();
        for i in 0..22_570 {
            pairs.push(pair(&format!("tr{i}"), &format!("S{}", i % 34), Split::Train));
        }
        for i in 0..6_891 {
            pairs.push(pair(&format!("te{i}"), &format!("T{}", i % 10), Split::Test));
        }
        let m = Manifest::new(pairs).unwrap();
        assert_eq!(m.train().len(), 22_570);
        assert_eq!(m.test().len(), 6_891);
    }

    #[test]
    fn too_few_subjects_rejected() {
        let pairs = vec![pair("p0", "only", Split::Train)];
        match split_subjects(pairs, 0.5, 0) {
            Err(DataError::TooFewSubjects(1)) => {}
            other => panic!("expected TooFewSubjects, got {other:?}"),
        }
    }
}
