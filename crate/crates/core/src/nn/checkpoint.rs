//! Checkpoints: `<base>.json` metadata plus `<base>.bin`, the model state as
//! little-endian f64 (parameters in declaration order, then buffers).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CnnConfig, GnnConfig, Model};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "bodymesh-checkpoint-1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "lowercase")]
pub enum Architecture {
    Gnn(GnnConfig),
    Cnn(CnnConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format: String,
    pub architecture: Architecture,
    pub param_shapes: Vec<[usize; 2]>,
    pub buffer_lens: Vec<usize>,
    pub dtype: String,
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(base.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

pub fn save_checkpoint<M: Model>(model: &M, base: &Path) -> Result<()> {
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT.into(),
        architecture: model.architecture(),
        param_shapes: model.params().iter().map(|p| [p.value.nrows(), p.value.ncols()]).collect(),
        buffer_lens: model.buffers().iter().map(|b| b.len()).collect(),
        dtype: "f64-le".into(),
    };
    let bytes: Vec<u8> = model.state().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(with_suffix(base, ".json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    fs::write(with_suffix(base, ".bin"), bytes)?;
    Ok(())
}

/// Metadata and flat state; pass the state to [`Model::load_state`] on a
/// model built from `meta.architecture`.
pub fn load_checkpoint(base: &Path) -> Result<(CheckpointMeta, Vec<f64>)> {
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(with_suffix(base, ".json"))?)?;
    if meta.format != CHECKPOINT_FORMAT || meta.dtype != "f64-le" {
        return Err(Error::Format(format!("unsupported checkpoint {} / {}", meta.format, meta.dtype)));
    }
    let bytes = fs::read(with_suffix(base, ".bin"))?;
    let want: usize = meta.param_shapes.iter().map(|s| s[0] * s[1]).sum::<usize>() + meta.buffer_lens.iter().sum::<usize>();
    if bytes.len() != want * 8 {
        return Err(Error::Format(format!("checkpoint payload has {} bytes, expected {}", bytes.len(), want * 8)));
    }
    let state = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((meta, state))
}
