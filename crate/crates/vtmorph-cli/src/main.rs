//! Command-line front end: train / register / evaluate / synth / gradcheck.
//!
//! Exit codes: 0 success, 1 verification failure, 2 invalid input,
//! 3 runtime abort.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use vtmorph::config::RunConfig;
use vtmorph::data::{
    load_gray, load_manifest, procedural_face, save_gray, save_manifest, synthesize_corpus,
};
use vtmorph::metrics::evaluate_pairs;
use vtmorph::train::{register_batch, train, write_results_csv, RegisterOptions, TrainError};

const EXIT_VERIFICATION: u8 = 1;
const EXIT_INVALID_INPUT: u8 = 2;
const EXIT_RUNTIME_ABORT: u8 = 3;

#[derive(Parser)]
#[command(name = "vtmorph", version, about = "Visible-thermal image registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config resolution shared by every command: defaults, then an optional
/// config file, then repeated --set key=value overrides, then --seed.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Plain-text key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. --set steps=500.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for --set seed=N.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set {kv:?}: expected KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the four networks on a manifest's train split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for checkpoints, losses.csv and the resolved config.
        #[arg(long)]
        out: PathBuf,
        /// Resume from an existing checkpoint (step counter continues).
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Register every manifest pair with a trained checkpoint.
    Register {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for registered images and results.csv.
        #[arg(long)]
        out: PathBuf,
        /// Skip failing pairs instead of aborting.
        #[arg(long)]
        continue_on_error: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score pair alignment in two directories and print a summary table.
    Evaluate {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        /// Report CSV path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a synthetic warped-pair corpus with ground-truth parameters.
    Synth {
        /// Directory of 8-bit grayscale base face images.
        #[arg(long)]
        base_dir: PathBuf,
        /// Number of pairs to generate.
        #[arg(long)]
        n: usize,
        /// Scale factor on all warp ranges (0 disables warping).
        #[arg(long, default_value_t = 1.0)]
        warp_range: f64,
        /// Output directory for images and manifest.csv.
        #[arg(long)]
        out: PathBuf,
        /// Fraction of subjects held out as the test split.
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        /// Populate the base dir with N seeded procedural faces first.
        #[arg(long)]
        make_bases: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Verify every differentiable op against finite differences.
    Gradcheck {
        /// Random seeds per op.
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        /// Max relative error allowed.
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
        /// Test hook: inject a failure into the named op.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

fn write_resolved_config(out_dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let path = out_dir.join("config.resolved.txt");
    std::fs::write(&path, cfg.to_text())
        .with_context(|| format!("cannot write {}", path.display()))?;
    println!("resolved config -> {}", path.display());
    Ok(())
}

fn cmd_train(
    manifest_path: &Path,
    out: &Path,
    resume: Option<&Path>,
    config: &ConfigArgs,
) -> anyhow::Result<u8> {
    let cfg = config.resolve()?;
    let manifest = load_manifest(manifest_path, true)?;
    write_resolved_config(out, &cfg)?;
    match train::<f32>(&manifest, &cfg.train, out, resume) {
        Ok(outcome) => {
            println!(
                "trained {} steps; final checkpoint {}",
                outcome.steps_run,
                outcome.final_checkpoint.display()
            );
            Ok(0)
        }
        Err(e @ TrainError::NonFiniteLoss { .. }) => {
            eprintln!("error: {e}");
            Ok(EXIT_RUNTIME_ABORT)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_register(
    checkpoint: &Path,
    manifest_path: &Path,
    out: &Path,
    continue_on_error: bool,
    config: &ConfigArgs,
) -> anyhow::Result<u8> {
    let cfg = config.resolve()?;
    let manifest = load_manifest(manifest_path, true)?;
    let loaded = vtmorph::checkpoint::load::<f32>(checkpoint)?;
    write_resolved_config(out, &cfg)?;

    let pairs: Vec<_> = manifest.pairs.iter().collect();
    let results = register_batch(
        &loaded.model,
        &pairs,
        out,
        &cfg.metrics,
        RegisterOptions { continue_on_error },
    )?;
    let results_path = out.join("results.csv");
    write_results_csv(&results_path, &results)?;
    println!(
        "registered {} of {} pairs; results -> {}",
        results.len(),
        pairs.len(),
        results_path.display()
    );
    Ok(0)
}

fn cmd_evaluate(before: &Path, after: &Path, out: &Path, config: &ConfigArgs) -> anyhow::Result<u8> {
    let cfg = config.resolve()?;
    let report = evaluate_pairs::<f32>(before, after, &cfg.metrics)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))?;
    }
    std::fs::write(out, report.to_csv())
        .with_context(|| format!("cannot write {}", out.display()))?;
    print!("{}", report.to_table());
    println!("report -> {}", out.display());
    if !report.unmatched.is_empty() {
        eprintln!("unmatched pairs skipped: {}", report.unmatched.join(", "));
        return Ok(EXIT_INVALID_INPUT);
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    base_dir: &Path,
    n: usize,
    warp_range: f64,
    out: &Path,
    test_fraction: f64,
    make_bases: Option<usize>,
    config: &ConfigArgs,
) -> anyhow::Result<u8> {
    let cfg = config.resolve()?;
    let size = cfg.train.image_size;

    if let Some(count) = make_bases {
        std::fs::create_dir_all(base_dir)
            .with_context(|| format!("cannot create {}", base_dir.display()))?;
        for i in 0..count {
            let face = procedural_face::<f32>(cfg.train.seed.wrapping_add(i as u64), size);
            save_gray(&base_dir.join(format!("base{i:03}.png")), &face)?;
        }
    }

    let entries = std::fs::read_dir(base_dir)
        .with_context(|| format!("cannot read base dir {}", base_dir.display()))?;
    let mut names: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    names.sort();
    let mut bases = Vec::new();
    for path in names {
        let subject = path.file_stem().unwrap().to_string_lossy().to_string();
        bases.push((subject, load_gray::<f32>(&path)?));
    }
    if bases.is_empty() {
        bail!("no base images found in {}", base_dir.display());
    }

    let synth_cfg = cfg.synth.scaled(warp_range);
    let manifest = synthesize_corpus(out, &bases, n, &synth_cfg, cfg.train.seed, test_fraction)?;
    let manifest_path = out.join("manifest.csv");
    save_manifest(&manifest_path, &manifest)?;
    write_resolved_config(out, &cfg)?;
    println!(
        "wrote {} pairs ({} train / {} test) -> {}",
        manifest.pairs.len(),
        manifest.train().len(),
        manifest.test().len(),
        manifest_path.display()
    );
    Ok(0)
}

fn cmd_gradcheck(seeds: u64, threshold: f64, corrupt: Option<&str>) -> u8 {
    let started = std::time::Instant::now();
    let report = vtmorph::gradcheck::run_suite(seeds, threshold, corrupt);
    for (name, err) in &report.results {
        let status = if err.is_finite() && *err < threshold {
            "ok"
        } else {
            "FAIL"
        };
        println!("{status:4} {name:24} max rel err {err:.3e}");
    }
    let (worst_name, worst_err) = report.worst();
    println!(
        "{} ops, {} seeds each, worst {worst_name} at {worst_err:.3e}, {:.1}s",
        report.results.len(),
        seeds,
        started.elapsed().as_secs_f64()
    );
    let failures = report.failures();
    if failures.is_empty() {
        0
    } else {
        for (name, err) in failures {
            eprintln!("verification failure: {name} (max rel err {err:.3e})");
        }
        EXIT_VERIFICATION
    }
}

fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(te) = cause.downcast_ref::<TrainError>() {
            return match te {
                TrainError::NonFiniteLoss { .. } | TrainError::Io { .. } => EXIT_RUNTIME_ABORT,
                _ => EXIT_INVALID_INPUT,
            };
        }
        if cause.downcast_ref::<vtmorph::data::DataError>().is_some()
            || cause.downcast_ref::<vtmorph::config::ConfigError>().is_some()
            || cause
                .downcast_ref::<vtmorph::checkpoint::CheckpointError>()
                .is_some()
            || cause.downcast_ref::<vtmorph::metrics::MetricError>().is_some()
        {
            return EXIT_INVALID_INPUT;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_RUNTIME_ABORT;
        }
    }
    EXIT_INVALID_INPUT
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.exit_code() == 0 { 0 } else { EXIT_INVALID_INPUT };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let outcome = match &cli.command {
        Command::Train {
            manifest,
            out,
            resume,
            config,
        } => cmd_train(manifest, out, resume.as_deref(), config),
        Command::Register {
            checkpoint,
            manifest,
            out,
            continue_on_error,
            config,
        } => cmd_register(checkpoint, manifest, out, *continue_on_error, config),
        Command::Evaluate {
            before,
            after,
            out,
            config,
        } => cmd_evaluate(before, after, out, config),
        Command::Synth {
            base_dir,
            n,
            warp_range,
            out,
            test_fraction,
            make_bases,
            config,
        } => cmd_synth(
            base_dir,
            *n,
            *warp_range,
            out,
            *test_fraction,
            *make_bases,
            config,
        ),
        Command::Gradcheck {
            seeds,
            threshold,
            corrupt,
        } => Ok(cmd_gradcheck(*seeds, *threshold, corrupt.as_deref())),
    };

    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}
