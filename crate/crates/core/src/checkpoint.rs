//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | offset     | size | content                                         |
//! |------------|------|-------------------------------------------------|
//! | 0          | 8    | magic `CLDCKPT1`                                |
//! | 8          | 8    | `u64` byte length `N` of the JSON header        |
//! | 16         | N    | UTF-8 JSON header                               |
//! | 16 + N     | rest | tensor values in header order, element-wise LE  |
//!
//! The header is `{"dtype": "f64"|"f32", "metadata": <any>, "tensors":
//! [{"name": ..., "shape": [...]}, ...]}`. The payload length must equal the
//! sum of all tensor sizes times the element width. Values are stored with
//! their native bit patterns, so a save/load round trip is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CLDCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },
    #[error("checkpoint holds {found} values, expected {expected}")]
    Dtype { found: String, expected: String },
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    metadata: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

/// Encodes `params` plus free-form `metadata`.
pub fn encode<T: Scalar>(params: &ParamSet<T>, metadata: &serde_json::Value) -> Vec<u8> {
    let header = Header {
        dtype: T::DTYPE.to_string(),
        metadata: metadata.clone(),
        tensors: params
            .iter()
            .map(|(name, t)| Entry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + params.numel() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in params.iter() {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

/// Decodes a checkpoint into its parameters and metadata.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(ParamSet<T>, serde_json::Value), CheckpointError> {
    let fmt = |offset, detail: &str| CheckpointError::Format {
        offset,
        detail: detail.to_string(),
    };
    if bytes.len() < 16 {
        return Err(fmt(bytes.len(), "truncated preamble"));
    }
    if &bytes[..8] != MAGIC {
        return Err(fmt(0, "bad magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize
        .checked_add(hlen)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| fmt(8, "header length exceeds file"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body])
        .map_err(|e| fmt(16 + e.column(), &format!("header json: {e}")))?;
    if header.dtype != T::DTYPE {
        return Err(CheckpointError::Dtype {
            found: header.dtype,
            expected: T::DTYPE.to_string(),
        });
    }
    let mut params = ParamSet::new();
    let mut off = body;
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let end = off + n * T::BYTES;
        if end > bytes.len() {
            return Err(fmt(bytes.len(), &format!("payload truncated inside {}", entry.name)));
        }
        let data = bytes[off..end].chunks_exact(T::BYTES).map(T::read_le).collect();
        let tensor = Tensor::new(entry.shape, data).map_err(|e| fmt(off, &e.to_string()))?;
        params
            .add(entry.name, tensor)
            .map_err(|e| fmt(off, &e.to_string()))?;
        off = end;
    }
    if off != bytes.len() {
        return Err(fmt(off, "trailing bytes after payload"));
    }
    Ok((params, header.metadata))
}

pub fn save<T: Scalar>(
    path: &Path,
    params: &ParamSet<T>,
    metadata: &serde_json::Value,
) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(params, metadata)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load<T: Scalar>(path: &Path) -> Result<(ParamSet<T>, serde_json::Value), CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}
