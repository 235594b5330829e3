//! Versioned binary container of named f32 tensors plus a JSON config block.
//!
//! Layout (little endian): magic `RDVCCKPT`, u32 version, u64 JSON length,
//! JSON bytes, u32 tensor count, then per tensor: u32 name length, name,
//! u8 dtype (0 = f32), u8 rank, u64 per dimension, row-major data.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::params::Layout;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RDVCCKPT";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config_json: String,
    pub tensors: Vec<NamedTensor>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.b.len());
        let end = end.ok_or_else(|| bad("truncated checkpoint"))?;
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(self.config_json.len() as u64).to_le_bytes());
        b.extend_from_slice(self.config_json.as_bytes());
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            b.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            b.extend_from_slice(t.name.as_bytes());
            b.push(DTYPE_F32);
            b.push(t.shape.len() as u8);
            for &d in &t.shape {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { b: bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let n = r.u64()? as usize;
        let config_json = std::str::from_utf8(r.take(n)?)
            .map_err(|_| bad("config block is not UTF-8"))?
            .to_string();
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| bad("tensor name is not UTF-8"))?
                .to_string();
            if r.u8()? != DTYPE_F32 {
                return Err(bad(format!("tensor {name}: unsupported dtype")));
            }
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| bad("tensor too large"))?;
            let raw = r.take(len.checked_mul(4).ok_or_else(|| bad("tensor too large"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.at != bytes.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok(Checkpoint {
            config_json,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Checkpoint::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Appends every tensor of `layout`, reading values from `params`.
    pub fn push_params(&mut self, prefix: &str, layout: &Layout, params: &[f32]) {
        for t in layout.tensors() {
            self.tensors.push(NamedTensor {
                name: format!("{prefix}{}", t.name),
                shape: t.shape.clone(),
                data: params[t.offset..t.offset + t.len()].to_vec(),
            });
        }
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.tensors.iter().any(|t| t.name.starts_with(prefix))
    }

    /// Rebuilds a flat parameter vector for `layout`; every tensor must be
    /// present with the exact shape.
    pub fn read_params(&self, prefix: &str, layout: &Layout) -> Result<Vec<f32>> {
        let by_name: BTreeMap<&str, &NamedTensor> =
            self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut p = vec![0f32; layout.len()];
        for t in layout.tensors() {
            let name = format!("{prefix}{}", t.name);
            let found = by_name
                .get(name.as_str())
                .ok_or_else(|| bad(format!("missing tensor {name}")))?;
            if found.shape != t.shape {
                return Err(bad(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    found.shape, t.shape
                )));
            }
            p[t.offset..t.offset + t.len()].copy_from_slice(&found.data);
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::params::Init;

    fn sample() -> (Layout, Vec<f32>) {
        let mut l = Layout::new();
        l.matrix("w", 2, 3, Init::Zeros);
        l.vector("b", 3, Init::Zeros);
        let p = (0..9).map(|i| i as f32 * 0.5 - 1.0).collect();
        (l, p)
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let (l, p) = sample();
        let mut c = Checkpoint {
            config_json: r#"{"a":1}"#.into(),
            tensors: vec![],
        };
        c.push_params("enc.", &l, &p);
        let bytes = c.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.read_params("enc.", &l).unwrap(), p);
    }

    #[test]
    fn shape_mismatch_and_corruption_are_rejected() {
        let (l, p) = sample();
        let mut c = Checkpoint::default();
        c.push_params("", &l, &p);
        let mut other = Layout::new();
        other.matrix("w", 3, 2, Init::Zeros);
        other.vector("b", 3, Init::Zeros);
        assert!(c.read_params("", &other).is_err());
        let bytes = c.encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::decode(&bad).is_err());
    }
}
