//! Bit-exact parameter checkpoints.
//!
//! JSON container with a format version, arbitrary metadata, and one entry
//! per parameter holding its shape and data. Values are serialized as
//! hex-encoded IEEE-754 bit patterns (16 hex chars per f64), so save/load
//! round-trips are exact and files are byte-identical across runs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    meta: Value,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    hex: String,
}

fn encode_f64s(data: &[f64]) -> String {
    let mut s = String::with_capacity(data.len() * 16);
    for x in data {
        s.push_str(&format!("{:016x}", x.to_bits()));
    }
    s
}

fn decode_f64s(hex: &str, expected: usize) -> Result<Vec<f64>> {
    if hex.len() != expected * 16 {
        return Err(Error::Data(format!(
            "hex payload has {} chars, expected {}",
            hex.len(),
            expected * 16
        )));
    }
    let bytes = hex.as_bytes();
    let mut out = Vec::with_capacity(expected);
    for i in 0..expected {
        let chunk = std::str::from_utf8(&bytes[i * 16..(i + 1) * 16])
            .map_err(|_| Error::Data("non-ascii hex payload".to_string()))?;
        let bits = u64::from_str_radix(chunk, 16)
            .map_err(|_| Error::Data(format!("bad hex f64 {chunk:?}")))?;
        out.push(f64::from_bits(bits));
    }
    Ok(out)
}

/// Serialize the store (plus caller metadata) to a JSON string.
pub fn to_json(store: &ParamStore, meta: Value) -> String {
    let file = CheckpointFile {
        format: "hypercrowd-checkpoint".to_string(),
        version: FORMAT_VERSION,
        meta,
        params: store
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                hex: encode_f64s(t.data()),
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("checkpoint serialization cannot fail")
}

/// Parse a checkpoint back into a fresh store and its metadata.
pub fn from_json(s: &str) -> Result<(ParamStore, Value)> {
    let file: CheckpointFile = serde_json::from_str(s)?;
    if file.format != "hypercrowd-checkpoint" {
        return Err(Error::Data(format!("unknown checkpoint format {:?}", file.format)));
    }
    if file.version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unsupported checkpoint version {} (expected {FORMAT_VERSION})",
            file.version
        )));
    }
    let mut store = ParamStore::new();
    for entry in &file.params {
        let n: usize = entry.shape.iter().product();
        let data = decode_f64s(&entry.hex, n)?;
        store.register(&entry.name, Tensor::new(entry.shape.clone(), data)?);
    }
    Ok((store, file.meta))
}

pub fn save(path: &Path, store: &ParamStore, meta: Value) -> Result<()> {
    fs::write(path, to_json(store, meta))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, Value)> {
    let s = fs::read_to_string(path)?;
    from_json(&s)
}
