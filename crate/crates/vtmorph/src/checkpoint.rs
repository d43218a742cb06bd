//! Versioned checkpoint container.
//!
//! Layout: a text header (magic line, dtype, step, config key=value lines),
//! then one `tensor <name> <ndim> <dims…>` line per parameter followed by
//! its raw little-endian values, and a final `end` line.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::config;
use crate::scalar::Scalar;
use crate::train::{RegistrationModel, TrainConfig};

pub const MAGIC: &str = "VTMORPH-CKPT-1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("not a checkpoint: expected leading magic {MAGIC:?}")]
    BadMagic,
    #[error("checkpoint dtype is {found}, expected {expected}")]
    DtypeMismatch { found: String, expected: String },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint config: {0}")]
    Config(String),
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
    #[error("parameter {name} has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write the model's parameters, step counter and full training config.
pub fn save<T: Scalar>(
    path: &Path,
    model: &RegistrationModel<T>,
    step: u64,
) -> Result<(), CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(format!("dtype {}\n", T::DTYPE).as_bytes());
    out.extend_from_slice(format!("step {step}\n").as_bytes());
    for (key, value) in config::train_config_to_kv(&model.config) {
        out.extend_from_slice(format!("config {key}={value}\n").as_bytes());
    }
    for (name, tensor) in model.named_params() {
        let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        out.extend_from_slice(
            format!("tensor {name} {} {}\n", tensor.shape().len(), dims.join(" ")).as_bytes(),
        );
        for v in tensor.data().iter() {
            v.write_le(&mut out);
        }
        out.push(b'\n');
    }
    out.extend_from_slice(b"end\n");

    let mut file = std::fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&out).map_err(io_err(path))?;
    Ok(())
}

pub struct Loaded<T: Scalar> {
    pub model: RegistrationModel<T>,
    pub step: u64,
    pub config: TrainConfig,
}

fn read_line(reader: &mut impl BufRead, path: &Path) -> Result<String, CheckpointError> {
    let mut buf = Vec::new();
    reader.read_until(b'\n', &mut buf).map_err(io_err(path))?;
    if buf.last() == Some(&b'\n') {
        buf.pop();
    }
    String::from_utf8(buf).map_err(|_| CheckpointError::Malformed("non-UTF8 header line".into()))
}

/// Read a checkpoint saved with the same scalar type, rebuild the model
/// from its stored config, and load every parameter.
pub fn load<T: Scalar>(path: &Path) -> Result<Loaded<T>, CheckpointError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);

    if read_line(&mut reader, path)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let dtype_line = read_line(&mut reader, path)?;
    let found = dtype_line
        .strip_prefix("dtype ")
        .ok_or_else(|| CheckpointError::Malformed("missing dtype line".into()))?;
    if found != T::DTYPE {
        return Err(CheckpointError::DtypeMismatch {
            found: found.to_string(),
            expected: T::DTYPE.to_string(),
        });
    }
    let step_line = read_line(&mut reader, path)?;
    let step: u64 = step_line
        .strip_prefix("step ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CheckpointError::Malformed("missing step line".into()))?;

    // config lines, then tensor blocks
    let mut kv = Vec::new();
    let pending;
    loop {
        let line = read_line(&mut reader, path)?;
        if let Some(rest) = line.strip_prefix("config ") {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| CheckpointError::Malformed(format!("bad config line {rest:?}")))?;
            kv.push((k.to_string(), v.to_string()));
        } else {
            pending = Some(line);
            break;
        }
    }
    let config =
        config::train_config_from_kv(&kv).map_err(|e| CheckpointError::Config(e.to_string()))?;

    let model = RegistrationModel::<T>::new(&config);
    let mut params: std::collections::BTreeMap<String, crate::tensor::Tensor<T>> =
        model.named_params().into_iter().collect();

    let mut line = pending.unwrap_or_default();
    loop {
        if line == "end" {
            break;
        }
        let rest = line
            .strip_prefix("tensor ")
            .ok_or_else(|| CheckpointError::Malformed(format!("unexpected line {line:?}")))?;
        let mut parts = rest.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| CheckpointError::Malformed("tensor line without name".into()))?
            .to_string();
        let ndim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CheckpointError::Malformed(format!("tensor {name}: bad rank")))?;
        let dims: Vec<usize> = parts
            .map(|s| {
                s.parse()
                    .map_err(|_| CheckpointError::Malformed(format!("tensor {name}: bad dims")))
            })
            .collect::<Result<_, _>>()?;
        if dims.len() != ndim {
            return Err(CheckpointError::Malformed(format!(
                "tensor {name}: rank {ndim} but {} dims",
                dims.len()
            )));
        }
        let numel: usize = dims.iter().product();
        let mut raw = vec![0u8; numel * T::BYTES + 1]; // payload + trailing newline
        reader.read_exact(&mut raw).map_err(io_err(path))?;
        let values: Vec<T> = raw[..numel * T::BYTES]
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect();

        let target = params
            .remove(&name)
            .ok_or_else(|| CheckpointError::MissingParam(name.clone()))?;
        if target.shape() != dims.as_slice() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                found: dims,
                expected: target.shape().to_vec(),
            });
        }
        target.set_data(values);
        line = read_line(&mut reader, path)?;
    }
    if let Some((name, _)) = params.into_iter().next() {
        return Err(CheckpointError::MissingParam(name));
    }
    Ok(Loaded {
        model,
        step,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        TrainConfig {
            image_size: 32,
            unet_stages: 3,
            unet_base: 4,
            disc_layers: 2,
            disc_base: 4,
            vit_patch: 4,
            vit_dim: 16,
            vit_depth: 1,
            vit_heads: 2,
            vit_mlp_ratio: 2,
            regressor_hidden: [8, 8, 8, 8, 8],
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn round_trip_preserves_parameters_step_and_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vtm");
        let model = RegistrationModel::<f32>::new(&tiny());
        save(&path, &model, 123).unwrap();

        let loaded = load::<f32>(&path).unwrap();
        assert_eq!(loaded.step, 123);
        assert_eq!(loaded.config, tiny());
        let a = model.named_params();
        let b = loaded.model.named_params();
        assert_eq!(a.len(), b.len());
        for ((n1, t1), (n2, t2)) in a.iter().zip(&b) {
            assert_eq!(n1, n2);
            let bits1: Vec<u32> = t1.to_vec().iter().map(|v| v.to_bits()).collect();
            let bits2: Vec<u32> = t2.to_vec().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits1, bits2, "parameter {n1} not bit-identical");
        }
    }

    #[test]
    fn magic_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.vtm");
        std::fs::write(&path, b"NOT-A-CHECKPOINT\n").unwrap();
        assert!(matches!(load::<f32>(&path), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn dtype_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vtm");
        let model = RegistrationModel::<f32>::new(&tiny());
        save(&path, &model, 1).unwrap();
        assert!(matches!(
            load::<f64>(&path),
            Err(CheckpointError::DtypeMismatch { .. })
        ));
    }
}
