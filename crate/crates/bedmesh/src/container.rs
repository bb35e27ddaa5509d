//! Versioned file of named, typed arrays with a JSON header.
//!
//! Layout: magic `BEDMESH\0`, format version (u32 LE), header length
//! (u64 LE), header JSON, array payloads back to back (little endian), and
//! a trailing SHA-256 of every preceding byte.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"BEDMESH\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F32(_) => "f32",
            ArrayData::F64(_) => "f64",
            ArrayData::I32(_) => "i32",
            ArrayData::U8(_) => "u8",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::I32(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write(&self, out: &mut Vec<u8>) {
        match self {
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U8(v) => out.extend_from_slice(v),
        }
    }

    fn read(dtype: &str, bytes: &[u8]) -> Result<Self> {
        Ok(match dtype {
            "f32" => ArrayData::F32(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            "f64" => ArrayData::F64(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            "i32" => ArrayData::I32(bytes.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()),
            "u8" => ArrayData::U8(bytes.to_vec()),
            other => return Err(CliError::Format(format!("unknown dtype {other}"))),
        })
    }

    fn width(dtype: &str) -> Result<usize> {
        match dtype {
            "f32" | "i32" => Ok(4),
            "f64" => Ok(8),
            "u8" => Ok(1),
            other => Err(CliError::Format(format!("unknown dtype {other}"))),
        }
    }

    /// Floating-point contents widened to f64.
    pub fn to_f64(&self) -> Result<Vec<f64>> {
        match self {
            ArrayData::F32(v) => Ok(v.iter().map(|&x| x as f64).collect()),
            ArrayData::F64(v) => Ok(v.clone()),
            _ => Err(CliError::Format(format!("expected a float array, found {}", self.dtype()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    arrays: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Container {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: ArrayData) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(CliError::Format(format!(
                "array {name}: shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        self.arrays.push(NamedArray {
            name,
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| CliError::Format(format!("{} file has no array {name}", self.kind)))
    }

    /// Array `name`, checked against `shape`.
    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<&ArrayData> {
        let a = self.get(name)?;
        if a.shape != shape {
            return Err(CliError::Format(format!(
                "array {name} has shape {:?}, expected {shape:?}",
                a.shape
            )));
        }
        Ok(&a.data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|a| Entry {
                    name: a.name.clone(),
                    dtype: a.data.dtype().into(),
                    shape: a.shape.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for a in &self.arrays {
            a.data.write(&mut out);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || CliError::Format("file is truncated".into());
        if bytes.len() < 20 + 32 {
            return Err(truncated());
        }
        if &bytes[..8] != MAGIC {
            return Err(CliError::Format("not a bedmesh container".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CliError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body_end = bytes.len() - 32;
        if 20 + header_len > body_end {
            return Err(truncated());
        }
        let header: Header = serde_json::from_slice(&bytes[20..20 + header_len])
            .map_err(|e| CliError::Format(format!("bad header: {e}")))?;
        let mut pos = 20 + header_len;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let n = e.shape.iter().product::<usize>() * ArrayData::width(&e.dtype)?;
            if pos + n > body_end {
                return Err(truncated());
            }
            arrays.push(NamedArray {
                data: ArrayData::read(&e.dtype, &bytes[pos..pos + n])?,
                name: e.name,
                shape: e.shape,
            });
            pos += n;
        }
        if pos != body_end {
            return Err(truncated());
        }
        if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
            return Err(CliError::Format("checksum mismatch".into()));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    /// Reads a container and checks that it holds a `kind` file.
    pub fn read(path: &Path, kind: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let c = Self::from_bytes(&bytes)?;
        if c.kind != kind {
            return Err(CliError::Format(format!(
                "{} holds a {} file, expected {kind}",
                path.display(),
                c.kind
            )));
        }
        Ok(c)
    }
}
