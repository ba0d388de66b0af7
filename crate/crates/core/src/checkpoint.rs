//! Model checkpoint files.
//!
//! Layout:
//!
//! ```text
//! bytes 0..8    magic  b"SRCKPT01"
//! bytes 8..16   header length H, u64 little-endian
//! bytes 16..16+H   UTF-8 JSON header
//! rest          parameter blob, f64 little-endian, concatenated in manifest order
//! ```
//!
//! The header holds `kind`, free-form `meta` (configuration, seeds, epoch
//! count, ...) and a `tensors` manifest of `{name, shape, offset, len}` where
//! `offset`/`len` count f64 values into the blob.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"SRCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(kind: &str, meta: serde_json::Value, params: &ParamSet) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        });
        offset += t.len();
    }
    let header = serde_json::to_vec(&CheckpointHeader {
        kind: kind.to_string(),
        meta,
        tensors,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, ParamSet)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic bytes"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    let blob = &bytes[16 + hlen..];
    if blob.len() % 8 != 0 {
        return Err(bad("blob length is not a multiple of 8"));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut params = ParamSet::new();
    for e in &header.tensors {
        let data = values
            .get(e.offset..e.offset + e.len)
            .ok_or_else(|| bad(&format!("tensor {} runs past the blob", e.name)))?;
        params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data.to_vec())?);
    }
    Ok((header, params))
}

pub fn write(path: impl AsRef<Path>, kind: &str, meta: serde_json::Value, params: &ParamSet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(kind, meta, params)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<(CheckpointHeader, ParamSet)> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Copies checkpoint values into `target`, which must have the same names
/// and shapes in the same order.
pub fn restore_into(target: &mut ParamSet, loaded: &ParamSet) -> Result<()> {
    if target.names() != loaded.names() {
        return Err(Error::Checkpoint("parameter names differ from the model layout".into()));
    }
    for (a, b) in target.tensors().iter().zip(loaded.tensors()) {
        if a.shape() != b.shape() {
            return Err(Error::Checkpoint(format!(
                "shape {:?} does not match model shape {:?}",
                b.shape(),
                a.shape()
            )));
        }
    }
    let flat: Vec<f64> = loaded.tensors().iter().flat_map(|t| t.data().iter().copied()).collect();
    target.assign_flat(&flat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut p = ParamSet::new();
        p.insert("a.w", Tensor::matrix(2, 2, vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE]).unwrap());
        p.insert("a.b", Tensor::row(&[0.1]).unwrap());
        let bytes = encode("test", serde_json::json!({"epochs": 3}), &p).unwrap();
        let (h, q) = decode(&bytes).unwrap();
        assert_eq!(h.kind, "test");
        assert_eq!(h.meta["epochs"], 3);
        assert_eq!(h.tensors[1].offset, 4);
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"nope").is_err());
        let mut p = ParamSet::new();
        p.insert("x", Tensor::row(&[1.0, 2.0]).unwrap());
        let mut bytes = encode("t", serde_json::Value::Null, &p).unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(decode(&bytes).is_err());
    }
}
