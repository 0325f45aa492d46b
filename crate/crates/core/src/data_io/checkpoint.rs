//! Model checkpoints: parameters, momentum buffers, optimizer scalars and an
//! embedded copy of the configuration they were produced with.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            4 bytes  "DICK"
//! version          u16      1
//! config_len       u32
//! config           config_len bytes of UTF-8 TOML ([shape] and [train])
//! epochs_completed u64
//! current_lr       f64
//! best_val_error   f64
//! stale_epochs     u64      epochs since the last validation improvement
//! tensor_count     u32
//! tensor_count times:
//!   kind           u8       0 = parameter, 1 = velocity
//!   name_len       u16
//!   name           name_len bytes of UTF-8
//!   rows, cols     u32, u32
//!   payload        rows * cols f64
//! ```
//!
//! Every parameter tensor appears exactly once per kind; shapes must match
//! the ones implied by the embedded config.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bytes::Reader;
use super::{read_all, write_atomic};
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelShape};
use crate::trainer::{OptimizerState, TrainConfig};

pub const MAGIC: [u8; 4] = *b"DICK";
pub const VERSION: u16 = 1;

const KIND_PARAM: u8 = 0;
const KIND_VELOCITY: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub shape: ModelShape,
    pub train: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: CheckpointConfig,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub epochs_completed: usize,
}

pub fn encode_checkpoint(
    params: &ModelParams,
    optimizer: &OptimizerState,
    train: &TrainConfig,
    epochs_completed: usize,
) -> Result<Vec<u8>> {
    if optimizer.velocity.shape() != params.shape() {
        return Err(Error::InvalidArgument("velocity shapes do not match the model".into()));
    }
    let config = CheckpointConfig {
        shape: params.shape().clone(),
        train: train.clone(),
    };
    let config_text = toml::to_string(&config).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());
    out.extend_from_slice(&(epochs_completed as u64).to_le_bytes());
    out.extend_from_slice(&optimizer.current_lr.to_le_bytes());
    out.extend_from_slice(&optimizer.best_val_error.to_le_bytes());
    out.extend_from_slice(&(optimizer.epochs_since_improvement as u64).to_le_bytes());

    let params_t = params.tensors();
    let vel_t = optimizer.velocity.tensors();
    out.extend_from_slice(&((params_t.len() + vel_t.len()) as u32).to_le_bytes());
    for (kind, tensors) in [(KIND_PARAM, params_t), (KIND_VELOCITY, vel_t)] {
        for t in tensors {
            out.push(kind);
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.value.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.value.cols() as u32).to_le_bytes());
            for v in t.value.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &ModelParams,
    optimizer: &OptimizerState,
    train: &TrainConfig,
    epochs_completed: usize,
) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(params, optimizer, train, epochs_completed)?)
}

struct RawTensor<'a> {
    rows: usize,
    cols: usize,
    payload: &'a [u8],
}

struct Parsed<'a> {
    config: CheckpointConfig,
    epochs_completed: usize,
    current_lr: f64,
    best_val_error: f64,
    stale_epochs: usize,
    tensors: HashMap<(u8, String), RawTensor<'a>>,
}

fn parse<'a>(bytes: &'a [u8], path: &'a Path) -> Result<Parsed<'a>> {
    let bad = |reason: String| Error::format(path, reason);
    let mut r = Reader::new(bytes, path);
    if r.take(4, "magic")? != MAGIC {
        return Err(bad("bad magic, expected DICK".into()));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let config_len = r.u32("config length")? as usize;
    let config_text = std::str::from_utf8(r.take(config_len, "config")?)
        .map_err(|_| bad("config block is not UTF-8".into()))?;
    let config: CheckpointConfig = toml::from_str(config_text).map_err(|e| bad(format!("config block: {e}")))?;
    config.shape.validate().map_err(|e| bad(e.to_string()))?;

    let epochs_completed = r.u64("epoch counter")? as usize;
    let current_lr = r.f64("learning rate")?;
    let best_val_error = r.f64("best validation error")?;
    let stale_epochs = r.u64("plateau counter")? as usize;

    let count = r.u32("tensor count")? as usize;
    let mut tensors = HashMap::with_capacity(count);
    for _ in 0..count {
        let kind = r.u8("tensor kind")?;
        if kind != KIND_PARAM && kind != KIND_VELOCITY {
            return Err(bad(format!("unknown tensor kind {kind}")));
        }
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| bad("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let n_bytes = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| bad(format!("tensor {name} is too large")))?;
        let payload = r.take(n_bytes, "tensor payload")?;
        if tensors.insert((kind, name.clone()), RawTensor { rows, cols, payload }).is_some() {
            return Err(bad(format!("tensor {name} appears twice")));
        }
    }
    if r.remaining() != 0 {
        return Err(bad(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Parsed {
        config,
        epochs_completed,
        current_lr,
        best_val_error,
        stale_epochs,
        tensors,
    })
}

fn fill(target: &mut ModelParams, kind: u8, tensors: &mut HashMap<(u8, String), RawTensor<'_>>, path: &Path) -> Result<()> {
    for t in target.tensors_mut() {
        let raw = tensors
            .remove(&(kind, t.name.clone()))
            .ok_or_else(|| Error::format(path, format!("missing tensor {} (kind {kind})", t.name)))?;
        if (raw.rows, raw.cols) != t.value.shape() {
            return Err(Error::format(
                path,
                format!(
                    "tensor {} is {}x{}, config implies {:?}",
                    t.name,
                    raw.rows,
                    raw.cols,
                    t.value.shape()
                ),
            ));
        }
        for (dst, c) in t.value.as_mut_slice().iter_mut().zip(raw.payload.chunks_exact(8)) {
            *dst = f64::from_le_bytes(c.try_into().expect("chunk of 8"));
        }
    }
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut parsed = parse(bytes, path)?;
    let shape = parsed.config.shape.clone();
    let mut params = ModelParams::zeros(&shape)?;
    let mut velocity = ModelParams::zeros(&shape)?;
    fill(&mut params, KIND_PARAM, &mut parsed.tensors, path)?;
    fill(&mut velocity, KIND_VELOCITY, &mut parsed.tensors, path)?;
    if let Some((_, name)) = parsed.tensors.keys().next() {
        return Err(Error::format(path, format!("unexpected tensor {name}")));
    }
    Ok(Checkpoint {
        config: parsed.config,
        params,
        optimizer: OptimizerState {
            velocity,
            current_lr: parsed.current_lr,
            best_val_error: parsed.best_val_error,
            epochs_since_improvement: parsed.stale_epochs,
        },
        epochs_completed: parsed.epochs_completed,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(&read_all(path)?, path)
}

/// Loads a checkpoint and rejects it unless it was saved for `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelShape) -> Result<Checkpoint> {
    let path = path.as_ref();
    let ckpt = load_checkpoint(path)?;
    if &ckpt.config.shape != expected {
        return Err(Error::format(
            path,
            format!("checkpoint shape {:?} does not match expected {expected:?}", ckpt.config.shape),
        ));
    }
    Ok(ckpt)
}

/// Number of model parameter scalars stored in a checkpoint file
/// (momentum buffers excluded).
pub fn parameter_scalar_count(path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    let parsed = parse(&bytes, path)?;
    Ok(parsed
        .tensors
        .iter()
        .filter(|((kind, _), _)| *kind == KIND_PARAM)
        .map(|(_, t)| t.rows * t.cols)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> ModelShape {
        ModelShape {
            input_dim: 4,
            reduced_dim: 3,
            segments: 5,
            widths: vec![2, 3],
            channels: 4,
            classes: 3,
        }
    }

    fn state(params: &ModelParams) -> OptimizerState {
        let mut velocity = ModelParams::init(params.shape(), 99).unwrap();
        velocity.scale(0.01);
        OptimizerState {
            velocity,
            current_lr: 5e-5,
            best_val_error: 0.125,
            epochs_since_improvement: 3,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let params = ModelParams::init(&shape(), 1).unwrap();
        let opt = state(&params);
        let cfg = TrainConfig::default();
        let bytes = encode_checkpoint(&params, &opt, &cfg, 7).unwrap();
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.params, params);
        assert_eq!(back.optimizer, opt);
        assert_eq!(back.epochs_completed, 7);
        assert_eq!(back.config.train, cfg);
        assert_eq!(encode_checkpoint(&back.params, &back.optimizer, &cfg, 7).unwrap(), bytes);
    }

    #[test]
    fn infinite_best_error_survives() {
        let params = ModelParams::init(&shape(), 1).unwrap();
        let opt = OptimizerState::new(&params, &TrainConfig::default()).unwrap();
        let bytes = encode_checkpoint(&params, &opt, &TrainConfig::default(), 0).unwrap();
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.optimizer.best_val_error, f64::INFINITY);
    }

    #[test]
    fn rejects_corruption() {
        let params = ModelParams::init(&shape(), 1).unwrap();
        let bytes = encode_checkpoint(&params, &state(&params), &TrainConfig::default(), 0).unwrap();
        let p = Path::new("mem");

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad, p), Err(Error::Format { .. })));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad, p), Err(Error::Format { .. })));

        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3], p), Err(Error::Format { .. })));

        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(decode_checkpoint(&bad, p), Err(Error::Format { .. })));
    }

    #[test]
    fn config_shape_mismatch_rejected() {
        // rewrite the embedded config to claim 4 classes; tensors still hold 3
        let params = ModelParams::init(&shape(), 1).unwrap();
        let bytes = encode_checkpoint(&params, &state(&params), &TrainConfig::default(), 0).unwrap();
        let len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[10..10 + len]).unwrap();
        let patched = text.replace("classes = 3", "classes = 4");
        assert_ne!(patched, text);
        let mut out = bytes[..6].to_vec();
        out.extend_from_slice(&(patched.len() as u32).to_le_bytes());
        out.extend_from_slice(patched.as_bytes());
        out.extend_from_slice(&bytes[10 + len..]);
        assert!(matches!(decode_checkpoint(&out, Path::new("mem")), Err(Error::Format { .. })));
    }

    #[test]
    fn load_for_rejects_other_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let params = ModelParams::init(&shape(), 1).unwrap();
        save_checkpoint(&path, &params, &state(&params), &TrainConfig::default(), 0).unwrap();
        assert!(load_checkpoint_for(&path, &shape()).is_ok());
        let mut other = shape();
        other.classes = 5;
        assert!(matches!(load_checkpoint_for(&path, &other), Err(Error::Format { .. })));
        assert_eq!(parameter_scalar_count(&path).unwrap(), params.scalar_count());
    }
}
