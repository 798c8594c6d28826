//! Tensor container shared by model checkpoints and sample archives.
//!
//! Layout: magic `GVAE`, version `u16` LE, header length `u32` LE, a UTF-8
//! JSON header, then raw little-endian payloads in header order.
//!
//! ```text
//! { "kind": "...", "config": {...}, "meta": {...},
//!   "tensors": [ { "name": "...", "dtype": "f32", "shape": [..] }, ... ] }
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GVAE";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    U8,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    meta: serde_json::Value,
    tensors: Vec<EntryHeader>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub config: serde_json::Value,
    pub meta: serde_json::Value,
    pub entries: Vec<Entry>,
}

impl Container {
    pub fn new(kind: &str, config: serde_json::Value, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.to_string(),
            config,
            meta,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Container(format!(
                "tensor {name}: shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        self.entries.push(Entry { name, shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors: self
                .entries
                .iter()
                .map(|e| EntryHeader {
                    name: e.name.clone(),
                    dtype: e.data.dtype(),
                    shape: e.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let header_len = u32::try_from(json.len()).map_err(|_| Error::Container("header too large".into()))?;
        let payload: usize = self
            .entries
            .iter()
            .map(|e| match &e.data {
                TensorData::F32(v) => v.len() * 4,
                TensorData::U8(v) => v.len(),
            })
            .sum();
        let mut out = Vec::with_capacity(10 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&json);
        for e in &self.entries {
            match &e.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U8(v) => out.extend_from_slice(v),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Container(msg);
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(bad("missing GVAE magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let body = &bytes[10..];
        if body.len() < header_len {
            return Err(bad(format!("header claims {header_len} bytes, file has {}", body.len())));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])?;
        let mut offset = header_len;
        let mut entries = Vec::with_capacity(header.tensors.len());
        for h in header.tensors {
            let n: usize = h.shape.iter().product();
            let size = match h.dtype {
                DType::F32 => n * 4,
                DType::U8 => n,
            };
            let Some(raw) = body.get(offset..offset + size) else {
                return Err(bad(format!("payload for {} truncated at byte {}", h.name, 10 + offset)));
            };
            let data = match h.dtype {
                DType::F32 => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                DType::U8 => TensorData::U8(raw.to_vec()),
            };
            offset += size;
            entries.push(Entry {
                name: h.name,
                shape: h.shape,
                data,
            });
        }
        if offset != body.len() {
            return Err(bad(format!("{} trailing bytes after payloads", body.len() - offset)));
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            meta: header.meta,
            entries,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Container {
        let mut c = Container::new("test", json!({"a": 1}), json!({"note": "x"}));
        c.push("w", vec![2, 2], TensorData::F32(vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE]))
            .unwrap();
        c.push("frames", vec![3], TensorData::U8(vec![0, 1, 255])).unwrap();
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"GVAE");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad).is_err());
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Container::from_bytes(&extra).is_err());
    }

    #[test]
    fn push_checks_shape() {
        let mut c = Container::new("t", json!(null), json!(null));
        assert!(c.push("x", vec![2, 3], TensorData::U8(vec![0; 5])).is_err());
    }
}
