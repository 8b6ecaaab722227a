//! Self-describing named-array container.
//!
//! Layout:
//!
//! ```text
//! b"PARELAB1"            8-byte magic
//! u64 LE                 header length in bytes
//! JSON header            {"magic","version","config_hash","meta","arrays":[{name,dtype,shape,offset,nbytes}]}
//! payload                raw little-endian arrays, offsets relative to payload start
//! ```
//!
//! Floats are stored as `f64`, indices as `u32`. Writing the same container
//! twice yields identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{NumericsError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PARELAB1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    U32(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            ArrayData::F64(d) => Some(d),
            ArrayData::U32(_) => None,
        }
    }

    pub fn as_u32(&self) -> Option<&[u32]> {
        match &self.data {
            ArrayData::U32(d) => Some(d),
            ArrayData::F64(_) => None,
        }
    }

    pub fn to_tensor(&self) -> Option<Tensor> {
        self.as_f64()
            .and_then(|d| Tensor::new(self.shape.clone(), d.to_vec()).ok())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub config_hash: String,
    pub meta: Map<String, Value>,
    arrays: Vec<(String, NamedArray)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
    config_hash: String,
    meta: Map<String, Value>,
    arrays: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

fn corrupt(msg: impl Into<String>) -> NumericsError {
    NumericsError::Container(msg.into())
}

impl Container {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            config_hash: config_hash.into(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, name: impl Into<String>, array: NamedArray) {
        let name = name.into();
        if let Some(slot) = self.arrays.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = array;
        } else {
            self.arrays.push((name, array));
        }
    }

    pub fn push_f64(&mut self, name: impl Into<String>, t: &Tensor) {
        self.push(
            name,
            NamedArray {
                shape: t.shape().to_vec(),
                data: ArrayData::F64(t.data().to_vec()),
            },
        );
    }

    pub fn push_u32(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<u32>) {
        self.push(name, NamedArray { shape, data: ArrayData::U32(data) });
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.arrays.len());
        for (name, arr) in &self.arrays {
            let offset = payload.len() as u64;
            let dtype = match &arr.data {
                ArrayData::F64(d) => {
                    d.iter().for_each(|v| payload.extend_from_slice(&v.to_le_bytes()));
                    "f64"
                }
                ArrayData::U32(d) => {
                    d.iter().for_each(|v| payload.extend_from_slice(&v.to_le_bytes()));
                    "u32"
                }
            };
            entries.push(Entry {
                name: name.clone(),
                dtype: dtype.into(),
                shape: arr.shape.clone(),
                offset,
                nbytes: payload.len() as u64 - offset,
            });
        }
        let header = Header {
            magic: String::from_utf8_lossy(MAGIC).into_owned(),
            version: VERSION,
            config_hash: self.config_hash.clone(),
            meta: self.meta.clone(),
            arrays: entries,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic (not a PARELAB1 container)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| corrupt(format!("header: {e}")))?;
        if header.version != VERSION {
            return Err(corrupt(format!("unsupported version {}", header.version)));
        }
        let payload = &bytes[16 + hlen..];
        let mut c = Container::new(header.config_hash);
        c.meta = header.meta;
        for e in header.arrays {
            let n: usize = e.shape.iter().product();
            let end = e.offset.checked_add(e.nbytes).ok_or_else(|| corrupt("offset overflow"))? as usize;
            let raw = payload
                .get(e.offset as usize..end)
                .ok_or_else(|| corrupt(format!("array `{}` exceeds payload", e.name)))?;
            let data = match e.dtype.as_str() {
                "f64" if raw.len() == 8 * n => ArrayData::F64(
                    raw.chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                "u32" if raw.len() == 4 * n => ArrayData::U32(
                    raw.chunks_exact(4)
                        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                other => {
                    return Err(corrupt(format!(
                        "array `{}`: dtype {other} with {} bytes for shape {:?}",
                        e.name,
                        raw.len(),
                        e.shape
                    )))
                }
            };
            c.push(e.name, NamedArray { shape: e.shape, data });
        }
        Ok(c)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
