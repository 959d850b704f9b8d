//! Named parameter tensors and the little-endian weight file format.
//!
//! Layout: magic `0x46414453`, `u32` version (1), `u32` entry count, then per
//! entry a `u16` name length, the UTF-8 name (`<layer-id>.<param>`), a `u8`
//! rank, `rank` x `u32` extents and the raw `f32` values. No padding.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{FadsError, Result};
use crate::graph::NetworkGraph;
use crate::tensor::Tensor;

pub const WEIGHT_MAGIC: u32 = 0x4641_4453;
pub const WEIGHT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    params: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, layer: &str, param: &str, tensor: Tensor) {
        self.params.insert(format!("{layer}.{param}"), tensor);
    }

    pub fn get(&self, layer: &str, param: &str) -> Result<&Tensor> {
        let key = format!("{layer}.{param}");
        self.params.get(&key).ok_or(FadsError::MissingParameter(key))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Checks that every parameter the graph needs is present, correctly
    /// shaped, finite, and (for batch norm) has non-negative variance.
    pub fn validate(&self, graph: &NetworkGraph) -> Result<()> {
        for (name, shape) in graph.required_parameters() {
            let t = self
                .params
                .get(&name)
                .ok_or_else(|| FadsError::MissingParameter(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(FadsError::Dimension {
                    op: "parameter shape",
                    left: t.shape().to_vec(),
                    right: shape,
                });
            }
            if !t.is_finite() {
                return Err(FadsError::NonFinite(name));
            }
            if name.ends_with(".var") && t.data().iter().any(|&v| v < 0.0) {
                return Err(FadsError::InvalidArgument(format!("`{name}` has negative variance")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&WEIGHT_MAGIC.to_le_bytes());
        out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a weight file without checking it against a graph.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.u32()?;
        if magic != WEIGHT_MAGIC {
            return Err(FadsError::Format(format!("bad magic 0x{magic:08x}, expected 0x{WEIGHT_MAGIC:08x}")));
        }
        let version = r.u32()?;
        if version != WEIGHT_VERSION {
            return Err(FadsError::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| FadsError::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(FadsError::NonFinite(name));
            }
            let t = Tensor::new(shape, data).map_err(|e| FadsError::Format(format!("`{name}`: {e}")))?;
            if store.params.insert(name.clone(), t).is_some() {
                return Err(FadsError::Format(format!("duplicate entry `{name}`")));
            }
        }
        if r.pos != bytes.len() {
            return Err(FadsError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(FadsError::Truncated {
                expected: end,
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn save_weights(store: &WeightStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, store.to_bytes()).map_err(|e| FadsError::io(path, e))
}

/// Reads a weight file and binds it against `graph`.
pub fn load_weights(path: impl AsRef<Path>, graph: &NetworkGraph) -> Result<WeightStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| FadsError::io(path, e))?;
    let store = WeightStore::from_bytes(&bytes)?;
    store.validate(graph)?;
    Ok(store)
}
