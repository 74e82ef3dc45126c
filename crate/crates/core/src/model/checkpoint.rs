//! Tensor container file.
//!
//! Layout:
//!
//! ```text
//! [u64 LE: header length N][N bytes: JSON header][payload: f64 LE values]
//! ```
//!
//! The header is `{"metadata": <any JSON>, "tensors": [{"name", "shape",
//! "offset"}]}` where `offset` counts bytes from the start of the payload.
//! Tensors are stored back to back in header order.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed tensor container: {0}")]
    Format(String),
}

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

/// Serializes named tensors plus free-form metadata.
pub fn encode(metadata: &serde_json::Value, tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += t.len() * 8;
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        metadata: metadata.clone(),
        tensors: entries,
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(8 + header.len() + offset);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(serde_json::Value, Vec<(String, Tensor)>), ContainerError> {
    let bad = |m: &str| ContainerError::Format(m.to_string());
    let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(|| bad("truncated length prefix"))?.try_into().unwrap();
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let header_end = 8usize.checked_add(header_len).ok_or_else(|| bad("header length overflow"))?;
    let header_bytes = bytes.get(8..header_end).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| ContainerError::Format(e.to_string()))?;
    let payload = &bytes[header_end..];
    let mut expected_offset = 0;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        if e.offset != expected_offset {
            return Err(ContainerError::Format(format!("tensor {} at offset {} (expected {expected_offset})", e.name, e.offset)));
        }
        let n: usize = e.shape.iter().product();
        let end = e.offset + n * 8;
        let raw = payload
            .get(e.offset..end)
            .ok_or_else(|| ContainerError::Format(format!("payload too short for tensor {}", e.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(e.shape, data).map_err(|err| ContainerError::Format(format!("tensor {}: {err}", e.name)))?;
        tensors.push((e.name, t));
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(bad("trailing bytes after last tensor"));
    }
    Ok((header.metadata, tensors))
}

pub fn write(path: &Path, metadata: &serde_json::Value, tensors: &[(String, Tensor)]) -> Result<(), ContainerError> {
    fs::write(path, encode(metadata, tensors)).map_err(|source| ContainerError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read(path: &Path) -> Result<(serde_json::Value, Vec<(String, Tensor)>), ContainerError> {
    let bytes = fs::read(path).map_err(|source| ContainerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn layout_is_length_prefixed_json_then_f64() {
        let t = Tensor::new(vec![2], vec![1.0, -2.5]).unwrap();
        let bytes = encode(&serde_json::json!({"k": 1}), &[("w".into(), t)]);
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + n]).unwrap();
        assert_eq!(header["tensors"][0]["shape"], serde_json::json!([2]));
        assert_eq!(header["tensors"][0]["offset"], 0);
        assert_eq!(&bytes[8 + n..8 + n + 8], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 8 + n + 16);
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = encode(&serde_json::Value::Null, &[("a".into(), t)]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode(&longer).is_err());
        assert!(decode(&bytes[..4]).is_err());
    }

    proptest! {
        #[test]
        fn prop_byte_exact_round_trip(
            shapes in prop::collection::vec(prop::collection::vec(1usize..4, 1..4), 0..5),
            seed in any::<u64>(),
        ) {
            let mut x = seed;
            let tensors: Vec<(String, Tensor)> = shapes.iter().enumerate().map(|(i, s)| {
                let n = s.iter().product();
                let data = (0..n).map(|_| { x = x.wrapping_mul(6364136223846793005).wrapping_add(1); (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5 }).collect();
                (format!("t{i}"), Tensor::new(s.clone(), data).unwrap())
            }).collect();
            let meta = serde_json::json!({"seed": seed, "names": shapes.len()});
            let bytes = encode(&meta, &tensors);
            let (m2, t2) = decode(&bytes).unwrap();
            prop_assert_eq!(&m2, &meta);
            prop_assert_eq!(&t2, &tensors);
            prop_assert_eq!(encode(&m2, &t2), bytes);
        }
    }
}
