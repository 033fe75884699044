//! Parameter checkpoints.
//!
//! JSON container: a format tag, an integer version, free-form metadata, and
//! one entry per parameter path with its shape and the values packed as
//! little-endian f64 bytes in base64.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "grouptraj-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    path: String,
    shape: Vec<usize>,
    values_le_f64: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    #[serde(default)]
    meta: serde_json::Value,
    params: Vec<Entry>,
}

fn pack(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

fn unpack(s: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| Error::Checkpoint(format!("bad base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint("value block not a multiple of 8 bytes".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn to_string(store: &ParamStore, meta: serde_json::Value) -> Result<String> {
    let params = store
        .ids()
        .map(|id| Entry {
            path: store.name(id).to_string(),
            shape: store.get(id).shape().to_vec(),
            values_le_f64: pack(store.get(id).data()),
        })
        .collect();
    let c = Container {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        meta,
        params,
    };
    Ok(serde_json::to_string_pretty(&c)?)
}

/// Parse a checkpoint into a fresh store plus its metadata.
pub fn from_str(s: &str) -> Result<(ParamStore, serde_json::Value)> {
    let c: Container = serde_json::from_str(s)?;
    if c.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format tag {}", c.format)));
    }
    if c.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", c.version)));
    }
    let mut store = ParamStore::new();
    for e in c.params {
        let values = unpack(&e.values_le_f64)?;
        let t = Tensor::new(e.shape, values)
            .map_err(|err| Error::Checkpoint(format!("{}: {err}", e.path)))?;
        store.add(e.path, t);
    }
    Ok((store, c.meta))
}

pub fn save(path: &Path, store: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let text = to_string(store, meta)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}
