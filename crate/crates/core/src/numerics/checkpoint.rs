//! Self-describing binary container for named arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "MBGNCKPT"
//! version    u32       1
//! header_len u64       length of the JSON header in bytes
//! header     JSON      {"config_hash", "metadata", "arrays": [{name, dtype, shape, offset, len}]}
//! payload    bytes     array data; f64 and u64 values are 8 bytes each, offsets are
//!                      relative to the start of the payload
//! ```
//!
//! `f64` values are stored as their IEEE-754 bit patterns, so a save/load cycle
//! is bitwise exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::io::write_atomic;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MBGNCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl ArrayData {
    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::U64(v) => v.len(),
        }
    }

    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F64(_) => "f64",
            ArrayData::U64(_) => "u64",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config_hash: String,
    metadata: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub metadata: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(config_hash: impl Into<String>, metadata: serde_json::Value) -> Self {
        Self {
            config_hash: config_hash.into(),
            metadata,
            arrays: Vec::new(),
        }
    }

    pub fn push_f64(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        self.arrays.push(NamedArray {
            name: name.into(),
            shape: shape.to_vec(),
            data: ArrayData::F64(data),
        });
    }

    pub fn push_u64(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<u64>) {
        self.arrays.push(NamedArray {
            name: name.into(),
            shape: shape.to_vec(),
            data: ArrayData::U64(data),
        });
    }

    pub fn push_params(&mut self, prefix: &str, params: &ParamStore) {
        for (_, name, t) in params.iter() {
            self.push_f64(format!("{prefix}{name}"), t.shape(), t.data().to_vec());
        }
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let a = self.array(name)?;
        match &a.data {
            ArrayData::F64(v) => Tensor::new(a.shape.clone(), v.clone()),
            ArrayData::U64(_) => Err(Error::Checkpoint(format!("array `{name}` is not f64"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match &self.array(name)?.data {
            ArrayData::U64(v) => Ok(v),
            ArrayData::F64(_) => Err(Error::Checkpoint(format!("array `{name}` is not u64"))),
        }
    }

    /// Overwrites every parameter in `params` from arrays named `prefix + name`.
    pub fn load_params(&self, prefix: &str, params: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = params
            .iter()
            .map(|(id, n, _)| (id, n.to_string()))
            .collect();
        for (id, name) in ids {
            let t = self.tensor(&format!("{prefix}{name}"))?;
            if t.shape() != params.get(id).shape() {
                return Err(Error::Shape {
                    op: "load checkpoint",
                    lhs: params.get(id).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            *params.get_mut(id) = t;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.arrays.len());
        for a in &self.arrays {
            if a.shape.iter().product::<usize>() != a.data.len() {
                return Err(Error::Shape {
                    op: "checkpoint array",
                    lhs: a.shape.clone(),
                    rhs: vec![a.data.len()],
                });
            }
            entries.push(ArrayEntry {
                name: a.name.clone(),
                dtype: a.data.dtype().to_string(),
                shape: a.shape.clone(),
                offset: payload.len(),
                len: a.data.len(),
            });
            match &a.data {
                ArrayData::F64(v) => v
                    .iter()
                    .for_each(|x| payload.extend_from_slice(&x.to_bits().to_le_bytes())),
                ArrayData::U64(v) => v
                    .iter()
                    .for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let header = serde_json::to_vec(&Header {
            config_hash: self.config_hash.clone(),
            metadata: self.metadata.clone(),
            arrays: entries,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
        let payload = &bytes[header_end..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let end = e.offset + e.len * 8;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!(
                    "array `{}` is truncated",
                    e.name
                )));
            }
            let words = payload[e.offset..end]
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")));
            let data = match e.dtype.as_str() {
                "f64" => ArrayData::F64(words.map(f64::from_bits).collect()),
                "u64" => ArrayData::U64(words.collect()),
                other => return Err(Error::Checkpoint(format!("unknown dtype `{other}`"))),
            };
            arrays.push(NamedArray {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        Ok(Self {
            config_hash: header.config_hash,
            metadata: header.metadata,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read `{}`: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip_is_exact() {
        let mut c = Checkpoint::new("abc", serde_json::json!({"k": 3}));
        c.push_f64("w", &[2, 2], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]);
        c.push_u64("perm", &[3], vec![2, 0, 1]);
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        let w = back.tensor("w").unwrap();
        assert_eq!(w.data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"not a checkpoint at all").is_err());
        let mut c = Checkpoint::new("h", serde_json::Value::Null);
        c.push_f64("w", &[4], vec![1.0; 4]);
        let bytes = c.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn params_round_trip() {
        let mut p = ParamStore::new();
        p.add("a", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        p.add("b.c", Tensor::new(vec![1, 1], vec![3.0]).unwrap());
        let mut c = Checkpoint::new("h", serde_json::Value::Null);
        c.push_params("model.", &p);
        let mut q = p.clone();
        *q.get_mut(super::super::ParamId(0)) = Tensor::zeros(&[2]);
        c.load_params("model.", &mut q).unwrap();
        assert_eq!(p, q);
    }
}
