//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"HGNNCKPT" | version: u32 | index_len: u64 | index: UTF-8 JSON | payload
//! ```
//!
//! The index maps each parameter name to `{"shape": [..], "offset": bytes}`,
//! with offsets relative to the start of the payload. The payload is the
//! concatenation of every tensor as IEEE-754 `f64` values. Names are written
//! in sorted order, so identical stores produce identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HGNNCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct IndexEntry {
    shape: Vec<usize>,
    offset: u64,
}

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut index = BTreeMap::new();
    let mut payload = Vec::with_capacity(store.num_scalars() * 8);
    for (name, t) in store.iter() {
        index.insert(
            name.to_string(),
            IndexEntry {
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
            },
        );
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let json = serde_json::to_vec(&index).expect("index serialises");
    let mut out = Vec::with_capacity(MAGIC.len() + 12 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

/// Decodes a checkpoint into a fresh store (seed 0; the seed is not stored).
pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing HGNNCKPT magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let index_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let index_end = 20usize
        .checked_add(index_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated index"))?;
    let index: BTreeMap<String, IndexEntry> = serde_json::from_slice(&bytes[20..index_end])
        .map_err(|e| Error::Checkpoint(format!("index: {e}")))?;
    let payload = &bytes[index_end..];
    let mut store = ParamStore::new(0);
    for (name, entry) in index {
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + n * 8;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!("payload for `{name}` is truncated")));
        }
        let data = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(&name, Tensor::new(entry.shape, data)?)?;
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&encode(store)).map_err(io)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    decode(&bytes)
}

/// Copies checkpoint values into `target`, which defines the expected names
/// and shapes. Returns the checkpoint names that `target` does not use.
/// A parameter missing from the checkpoint, or with a different shape, is an
/// error.
pub fn restore_into(target: &mut ParamStore, loaded: &ParamStore) -> Result<Vec<String>> {
    let expected: BTreeSet<String> = target.names().map(str::to_string).collect();
    for name in &expected {
        let v = loaded
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
        target.set(name, v.clone())?;
    }
    let unused: Vec<String> = loaded
        .names()
        .filter(|n| !expected.contains(*n))
        .map(str::to_string)
        .collect();
    for name in &unused {
        log::warn!("checkpoint parameter `{name}` is unused by this model");
    }
    Ok(unused)
}
