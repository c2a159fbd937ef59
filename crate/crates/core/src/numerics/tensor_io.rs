//! Flat named-tensor container.
//!
//! Layout (all integers little-endian):
//! `b"SGILTNS1"`, `u32` tensor count, then per tensor `u32` name length,
//! UTF-8 name, `u64` rows, `u64` cols, `rows·cols` `f64` values row-major.

use std::fs;
use std::path::Path;

use super::DenseMatrix;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SGILTNS1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: DenseMatrix,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, value: DenseMatrix) -> Self {
        Self {
            name: name.into(),
            value,
        }
    }
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: Vec<NamedTensor>,
}

impl ParamSet {
    pub fn new(tensors: Vec<NamedTensor>) -> Self {
        Self { tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &NamedTensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut NamedTensor {
        &mut self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&DenseMatrix> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.value)
    }

    pub fn push(&mut self, t: NamedTensor) -> usize {
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor> {
        self.tensors.iter()
    }

    pub fn into_tensors(self) -> Vec<NamedTensor> {
        self.tensors
    }
}

pub fn encode_tensors(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.value.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(t.value.cols() as u64).to_le_bytes());
        for v in t.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode_tensors(bytes: &[u8]) -> std::result::Result<Vec<NamedTensor>, String> {
    struct Cursor<'a>(&'a [u8]);
    impl<'a> Cursor<'a> {
        fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
            if self.0.len() < n {
                return Err("truncated".into());
            }
            let (head, rest) = self.0.split_at(n);
            self.0 = rest;
            Ok(head)
        }
        fn u32(&mut self) -> std::result::Result<u32, String> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }
        fn u64(&mut self) -> std::result::Result<u64, String> {
            Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
    }
    let mut c = Cursor(bytes);
    if c.take(8)? != MAGIC {
        return Err("bad magic".into());
    }
    let count = c.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|e| e.to_string())?;
        let rows = c.u64()? as usize;
        let cols = c.u64()? as usize;
        let n = rows.checked_mul(cols).ok_or("shape overflow")?;
        let raw = c.take(n.checked_mul(8).ok_or("shape overflow")?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push(NamedTensor::new(
            name,
            DenseMatrix::new(rows, cols, data).map_err(|e| e.to_string())?,
        ));
    }
    if !c.0.is_empty() {
        return Err("trailing bytes".into());
    }
    Ok(out)
}

pub fn write_tensors(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    fs::write(path, encode_tensors(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&bytes).map_err(|message| Error::Snapshot {
        path: path.to_path_buf(),
        message,
    })
}
