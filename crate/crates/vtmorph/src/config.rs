//! Plain-text key=value run configuration.
//!
//! One flat namespace covers training, metric and synthesis settings.
//! Unknown keys are rejected; every run logs the fully resolved listing.

use std::path::Path;

use crate::data::SynthConfig;
use crate::metrics::MetricConfig;
use crate::train::{CycleTarget, TrainConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key}: cannot parse {value:?}: {msg}")]
    BadValue {
        key: String,
        value: String,
        msg: String,
    },
    #[error("config line {line}: expected key=value, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("cannot read config file {0}")]
    Unreadable(std::path::PathBuf),
}

/// Everything a run can be told to do.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub metrics: MetricConfig,
    pub synth: SynthConfig,
    pub crop_threshold: f64,
    pub crop_min_component: usize,
    pub test_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            metrics: MetricConfig::default(),
            synth: SynthConfig::default(),
            crop_threshold: 0.35,
            crop_min_component: 16,
            test_fraction: 0.2,
        }
    }
}

fn bad<T>(key: &str, value: &str, msg: impl ToString) -> Result<T, ConfigError> {
    Err(ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        msg: msg.to_string(),
    })
}

macro_rules! parse_num {
    ($key:expr, $value:expr) => {
        match $value.parse() {
            Ok(v) => v,
            Err(e) => return bad($key, $value, e),
        }
    };
}

impl RunConfig {
    /// All keys with their current values, in declaration order. This is
    /// both the log format and the config-file format.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = train_config_to_kv(&self.train);
        let m = &self.metrics;
        let s = &self.synth;
        for (k, v) in [
            ("edge_radius", m.edge_radius.to_string()),
            ("ssim_window", m.ssim_window.to_string()),
            ("ssim_sigma", m.ssim_sigma.to_string()),
            ("ssim_c1", m.ssim_c1.to_string()),
            ("ssim_c2", m.ssim_c2.to_string()),
            ("mi_bins", m.mi_bins.to_string()),
            ("feature_seed", m.feature_seed.to_string()),
            ("feature_dim", m.feature_dim.to_string()),
            ("synth_max_translation", s.max_translation.to_string()),
            ("synth_max_rotation_deg", s.max_rotation_deg.to_string()),
            ("synth_scale_min", s.scale_min.to_string()),
            ("synth_scale_max", s.scale_max.to_string()),
            ("synth_max_shear", s.max_shear.to_string()),
            ("synth_blur_sigma", s.blur_sigma.to_string()),
            ("synth_min_coverage", s.min_coverage.to_string()),
            ("synth_max_retries", s.max_retries.to_string()),
            ("crop_threshold", self.crop_threshold.to_string()),
            ("crop_min_component", self.crop_min_component.to_string()),
            ("test_fraction", self.test_fraction.to_string()),
        ] {
            kv.push((k.to_string(), v));
        }
        kv
    }

    /// Apply one key=value override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if train_config_set(&mut self.train, key, value)? {
            return Ok(());
        }
        let m = &mut self.metrics;
        let s = &mut self.synth;
        match key {
            "edge_radius" => m.edge_radius = parse_num!(key, value),
            "ssim_window" => m.ssim_window = parse_num!(key, value),
            "ssim_sigma" => m.ssim_sigma = parse_num!(key, value),
            "ssim_c1" => m.ssim_c1 = parse_num!(key, value),
            "ssim_c2" => m.ssim_c2 = parse_num!(key, value),
            "mi_bins" => m.mi_bins = parse_num!(key, value),
            "feature_seed" => m.feature_seed = parse_num!(key, value),
            "feature_dim" => m.feature_dim = parse_num!(key, value),
            "synth_max_translation" => s.max_translation = parse_num!(key, value),
            "synth_max_rotation_deg" => s.max_rotation_deg = parse_num!(key, value),
            "synth_scale_min" => s.scale_min = parse_num!(key, value),
            "synth_scale_max" => s.scale_max = parse_num!(key, value),
            "synth_max_shear" => s.max_shear = parse_num!(key, value),
            "synth_blur_sigma" => s.blur_sigma = parse_num!(key, value),
            "synth_min_coverage" => s.min_coverage = parse_num!(key, value),
            "synth_max_retries" => s.max_retries = parse_num!(key, value),
            "crop_threshold" => self.crop_threshold = parse_num!(key, value),
            "crop_min_component" => self.crop_min_component = parse_num!(key, value),
            "test_fraction" => self.test_fraction = parse_num!(key, value),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parse a config file: key=value lines, blank lines and `#` comments.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|_| ConfigError::Unreadable(path.to_path_buf()))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::BadLine {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// The resolved configuration as config-file text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_kv() {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }
}

pub fn train_config_to_kv(t: &TrainConfig) -> Vec<(String, String)> {
    let hidden = t
        .regressor_hidden
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",");
    [
        ("seed", t.seed.to_string()),
        ("steps", t.steps.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("image_size", t.image_size.to_string()),
        ("lr_g", t.lr_g.to_string()),
        ("lr_d", t.lr_d.to_string()),
        ("lr_stn", t.lr_stn.to_string()),
        ("beta1", t.beta1.to_string()),
        ("beta2", t.beta2.to_string()),
        ("lambda_adv", t.lambda_adv.to_string()),
        ("lambda_l1_v2t", t.lambda_l1_v2t.to_string()),
        ("lambda_l1_t2v", t.lambda_l1_t2v.to_string()),
        ("lambda_cyc", t.lambda_cyc.to_string()),
        ("lambda_theta", t.lambda_theta.to_string()),
        ("checkpoint_every", t.checkpoint_every.to_string()),
        ("cycle_target", t.cycle_target.as_str().to_string()),
        ("unet_stages", t.unet_stages.to_string()),
        ("unet_base", t.unet_base.to_string()),
        ("disc_layers", t.disc_layers.to_string()),
        ("disc_base", t.disc_base.to_string()),
        ("vit_patch", t.vit_patch.to_string()),
        ("vit_dim", t.vit_dim.to_string()),
        ("vit_depth", t.vit_depth.to_string()),
        ("vit_heads", t.vit_heads.to_string()),
        ("vit_mlp_ratio", t.vit_mlp_ratio.to_string()),
        ("regressor_hidden", hidden),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Apply one train-config key; Ok(false) when the key belongs elsewhere.
pub fn train_config_set(t: &mut TrainConfig, key: &str, value: &str) -> Result<bool, ConfigError> {
    match key {
        "seed" => t.seed = parse_num!(key, value),
        "steps" => t.steps = parse_num!(key, value),
        "batch_size" => t.batch_size = parse_num!(key, value),
        "image_size" => t.image_size = parse_num!(key, value),
        "lr_g" => t.lr_g = parse_num!(key, value),
        "lr_d" => t.lr_d = parse_num!(key, value),
        "lr_stn" => t.lr_stn = parse_num!(key, value),
        "beta1" => t.beta1 = parse_num!(key, value),
        "beta2" => t.beta2 = parse_num!(key, value),
        "lambda_adv" => t.lambda_adv = parse_num!(key, value),
        "lambda_l1_v2t" => t.lambda_l1_v2t = parse_num!(key, value),
        "lambda_l1_t2v" => t.lambda_l1_t2v = parse_num!(key, value),
        "lambda_cyc" => t.lambda_cyc = parse_num!(key, value),
        "lambda_theta" => t.lambda_theta = parse_num!(key, value),
        "checkpoint_every" => t.checkpoint_every = parse_num!(key, value),
        "cycle_target" => match CycleTarget::parse(value) {
            Some(c) => t.cycle_target = c,
            None => return bad(key, value, "expected a or a1"),
        },
        "unet_stages" => t.unet_stages = parse_num!(key, value),
        "unet_base" => t.unet_base = parse_num!(key, value),
        "disc_layers" => t.disc_layers = parse_num!(key, value),
        "disc_base" => t.disc_base = parse_num!(key, value),
        "vit_patch" => t.vit_patch = parse_num!(key, value),
        "vit_dim" => t.vit_dim = parse_num!(key, value),
        "vit_depth" => t.vit_depth = parse_num!(key, value),
        "vit_heads" => t.vit_heads = parse_num!(key, value),
        "vit_mlp_ratio" => t.vit_mlp_ratio = parse_num!(key, value),
        "regressor_hidden" => {
            let parts: Vec<usize> = value
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|e| ConfigError::BadValue {
                    key: key.to_string(),
                    value: value.to_string(),
                    msg: format!("{e}"),
                })?;
            if parts.len() != 5 {
                return bad(key, value, "exactly 5 widths required");
            }
            t.regressor_hidden = [parts[0], parts[1], parts[2], parts[3], parts[4]];
        }
        _ => return Ok(false),
    }
    Ok(true)
}

/// Rebuild a train config from checkpoint key=value pairs.
pub fn train_config_from_kv(kv: &[(String, String)]) -> Result<TrainConfig, ConfigError> {
    let mut t = TrainConfig::default();
    for (k, v) in kv {
        if !train_config_set(&mut t, k, v)? {
            return Err(ConfigError::UnknownKey(k.clone()));
        }
    }
    Ok(t)
}
