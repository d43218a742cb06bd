//! End-to-end command tests against the built binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vtmorph"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Tiny-model overrides shared by the pipeline tests.
const SMALL: &[&str] = &[
    "--set", "image_size=32",
    "--set", "unet_stages=3",
    "--set", "unet_base=8",
    "--set", "disc_layers=2",
    "--set", "disc_base=8",
    "--set", "vit_patch=4",
    "--set", "vit_dim=32",
    "--set", "vit_depth=1",
    "--set", "vit_heads=2",
    "--set", "vit_mlp_ratio=2",
    "--set", "regressor_hidden=16,16,16,16,16",
    "--set", "batch_size=2",
    "--set", "checkpoint_every=0",
];

fn synth_corpus(dir: &Path, seed: &str, warp: &str) -> PathBuf {
    let out = run(
        &[
            &[
                "synth",
                "--base-dir", "bases",
                "--make-bases", "4",
                "--n", "10",
                "--warp-range", warp,
                "--seed", seed,
                "--out", "corpus",
                "--set", "image_size=32",
            ][..],
        ]
        .concat(),
        dir,
    );
    assert_eq!(code(&out), 0, "synth failed: {}", String::from_utf8_lossy(&out.stderr));
    dir.join("corpus")
}

#[test]
fn synth_writes_rows_and_files_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), "9", "1.0");
    let manifest = std::fs::read_to_string(corpus.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 11); // header + 10 rows
    let pngs = std::fs::read_dir(&corpus)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "png")
        })
        .count();
    assert_eq!(pngs, 20);

    // same seed, second run in a fresh directory: byte-identical corpus
    let dir2 = tempfile::tempdir().unwrap();
    let corpus2 = synth_corpus(dir2.path(), "9", "1.0");
    assert_eq!(
        manifest,
        std::fs::read_to_string(corpus2.join("manifest.csv")).unwrap()
    );
    for entry in std::fs::read_dir(&corpus).unwrap() {
        let p1 = entry.unwrap().path();
        if p1.extension().is_some_and(|x| x == "png") {
            let p2 = corpus2.join(p1.file_name().unwrap());
            assert_eq!(
                std::fs::read(&p1).unwrap(),
                std::fs::read(&p2).unwrap(),
                "{p1:?} differs"
            );
        }
    }
}

#[test]
fn synth_zero_warp_range_records_identity() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), "3", "0");
    let manifest = std::fs::read_to_string(corpus.join("manifest.csv")).unwrap();
    for line in manifest.lines().skip(1) {
        assert!(line.ends_with(",1 0 0 0 1 0"), "non-identity theta in {line}");
    }
}

#[test]
fn synth_empty_base_dir_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("bases")).unwrap();
    let out = run(
        &["synth", "--base-dir", "bases", "--n", "4", "--out", "corpus"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn train_missing_manifest_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["train", "--manifest", "absent.csv", "--out", "run"],
        dir.path(),
    );
    assert_eq!(code(&out), 2, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), "5", "0.5");
    let out = run(
        &[
            "train",
            "--manifest",
            corpus.join("manifest.csv").to_str().unwrap(),
            "--out", "run",
            "--set", "bogus_key=1",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));
}

#[test]
fn pipeline_train_register_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), "7", "0.5");
    let manifest = corpus.join("manifest.csv");
    let train_args: Vec<&str> = [
        "train",
        "--manifest", manifest.to_str().unwrap(),
        "--out", "run",
        "--seed", "7",
        "--set", "steps=3",
    ]
    .iter()
    .chain(SMALL)
    .copied()
    .collect();
    let out = run(&train_args, dir.path());
    assert_eq!(code(&out), 0, "train failed: {}", String::from_utf8_lossy(&out.stderr));
    let losses1 = std::fs::read_to_string(dir.path().join("run/losses.csv")).unwrap();
    assert_eq!(losses1.lines().count(), 4);
    assert!(dir.path().join("run/config.resolved.txt").is_file());

    // same seed: bit-identical loss log
    let rerun_args: Vec<&str> = train_args
        .iter()
        .map(|s| if *s == "run" { "run2" } else { *s })
        .collect();
    let out = run(&rerun_args, dir.path());
    assert_eq!(code(&out), 0);
    let losses2 = std::fs::read_to_string(dir.path().join("run2/losses.csv")).unwrap();
    assert_eq!(losses1, losses2);

    // register all pairs
    let ckpt = dir.path().join("run/ckpt-000003.vtm");
    let out = run(
        &[
            "register",
            "--checkpoint", ckpt.to_str().unwrap(),
            "--manifest", manifest.to_str().unwrap(),
            "--out", "reg",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "register failed: {}", String::from_utf8_lossy(&out.stderr));
    let results1 = std::fs::read_to_string(dir.path().join("reg/results.csv")).unwrap();
    assert_eq!(results1.lines().count(), 11, "one record per pair");
    let regs = std::fs::read_dir(dir.path().join("reg"))
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .ends_with("_thm_reg.png")
        })
        .count();
    assert_eq!(regs, 10, "output count equals manifest pair count");

    // re-register: identical θ file
    let out = run(
        &[
            "register",
            "--checkpoint", ckpt.to_str().unwrap(),
            "--manifest", manifest.to_str().unwrap(),
            "--out", "reg2",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let results2 = std::fs::read_to_string(dir.path().join("reg2/results.csv")).unwrap();
    assert_eq!(results1, results2);

    // evaluate before-vs-before: zero deltas, 5 metric columns
    let out = run(
        &[
            "evaluate",
            "--before", corpus.to_str().unwrap(),
            "--after", corpus.to_str().unwrap(),
            "--out", "eval/report.csv",
            "--set", "feature_dim=32",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "evaluate failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("+0.0%"), "expected zero deltas:\n{stdout}");
    let report = std::fs::read_to_string(dir.path().join("eval/report.csv")).unwrap();
    let header = report.lines().next().unwrap();
    assert_eq!(
        header,
        "pair_id,phase,ssim_edges,ncc_edges,mutual_info,fid,lpips_proxy"
    );

    // aggregate rows equal the column means, recomputed externally
    let mut ssim_sum = 0.0f64;
    let mut rows = 0usize;
    let mut aggregate_before = None;
    for line in report.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells[0] == "AGGREGATE" {
            if cells[1] == "before" {
                aggregate_before = Some(cells[2].parse::<f64>().unwrap());
            }
            continue;
        }
        if cells[1] == "before" {
            ssim_sum += cells[2].parse::<f64>().unwrap();
            rows += 1;
        }
    }
    let mean = ssim_sum / rows as f64;
    assert!((aggregate_before.unwrap() - mean).abs() < 1e-5);
}

#[test]
fn register_identity_checkpoint_outputs_equal_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), "11", "0.5");
    let manifest = corpus.join("manifest.csv");
    // save an untrained model directly: its regressor still holds the
    // identity init, so registration must be a no-op warp
    let mut cfg = vtmorph::config::RunConfig::default();
    for pair in SMALL.chunks(2) {
        if pair[0] == "--set" {
            let (k, v) = pair[1].split_once('=').unwrap();
            cfg.set(k, v).unwrap();
        }
    }
    let model = vtmorph::train::RegistrationModel::<f32>::new(&cfg.train);
    let ckpt = dir.path().join("identity.vtm");
    vtmorph::checkpoint::save(&ckpt, &model, 0).unwrap();

    let out = run(
        &[
            "register",
            "--checkpoint", ckpt.to_str().unwrap(),
            "--manifest", manifest.to_str().unwrap(),
            "--out", "reg",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "register failed: {}", String::from_utf8_lossy(&out.stderr));
    for i in 0..10 {
        let orig = std::fs::read(corpus.join(format!("p{i:05}_thm.png"))).unwrap();
        let reg = std::fs::read(dir.path().join(format!("reg/p{i:05}_thm_reg.png"))).unwrap();
        assert_eq!(orig, reg, "pair p{i:05} not byte-identical");
    }
}

#[test]
fn register_bad_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), "13", "0.5");
    std::fs::write(dir.path().join("bad.vtm"), b"nonsense").unwrap();
    let out = run(
        &[
            "register",
            "--checkpoint", "bad.vtm",
            "--manifest", corpus.join("manifest.csv").to_str().unwrap(),
            "--out", "reg",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn evaluate_unmatched_pairs_exit_2_with_listing() {
    let dir = tempfile::tempdir().unwrap();
    let c1 = synth_corpus(dir.path(), "15", "0.5");
    // second dir with fewer pairs
    let sub = dir.path().join("subset");
    std::fs::create_dir(&sub).unwrap();
    for i in 0..6 {
        for suffix in ["vis", "thm"] {
            let name = format!("p{i:05}_{suffix}.png");
            std::fs::copy(c1.join(&name), sub.join(&name)).unwrap();
        }
    }
    let out = run(
        &[
            "evaluate",
            "--before", c1.to_str().unwrap(),
            "--after", sub.to_str().unwrap(),
            "--out", "eval.csv",
            "--set", "feature_dim=32",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("p00006"), "unmatched ids listed: {stderr}");
}

#[test]
fn gradcheck_passes_and_corruption_hook_fails_with_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gradcheck", "--seeds", "2"], dir.path());
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    // every op exactly once
    for op in ["conv2d", "grid_sample", "softmax_cross_entropy"] {
        assert_eq!(
            stdout.matches(&format!(" {op} ")).count(),
            1,
            "{op} listed once:\n{stdout}"
        );
    }

    let out = run(
        &["gradcheck", "--seeds", "1", "--corrupt", "sigmoid"],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigmoid"));
}
