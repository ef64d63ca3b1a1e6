//! Flat tensor archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   "LFTA"          4 bytes
//! version u32             currently 1
//! count   u32             number of tensors
//! repeated `count` times:
//!   name_len u32, name [u8; name_len] (UTF-8)
//!   dtype    u8             0 = f32
//!   ndim     u32, dims [u64; ndim]
//!   data     [f32; prod(dims)]
//! ```
//!
//! Tensor names follow the original checkpoint's state-dict keys, e.g.
//! `visual.attnpool.positional_embedding` or
//! `transformer.resblocks.0.attn.in_proj_weight`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LFTA";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Contract(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    tensors: BTreeMap<String, Tensor>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[DTYPE_F32])?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the serialized archive.
    pub fn digest(&self) -> String {
        struct HashWriter(Sha256);
        impl Write for HashWriter {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                self.0.update(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let mut w = std::io::BufWriter::new(HashWriter(Sha256::new()));
        self.write_to(&mut w).expect("hashing cannot fail");
        let inner = w.into_inner().unwrap_or_else(|_| unreachable!("flush cannot fail"));
        hex::encode(inner.0.finalize())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::asset(path, msg))
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| "truncated header")?;
        if &magic != MAGIC {
            return Err(format!("bad magic {magic:?}, expected {MAGIC:?}"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(format!("unsupported archive version {version}"));
        }
        let count = read_u32(&mut r)?;
        let mut tensors = BTreeMap::new();
        for i in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > r.len() {
                return Err(format!("tensor {i}: name length {name_len} exceeds file"));
            }
            let (name, rest) = r.split_at(name_len);
            let name = std::str::from_utf8(name)
                .map_err(|_| format!("tensor {i}: name is not UTF-8"))?
                .to_string();
            r = rest;
            let mut dtype = [0u8; 1];
            r.read_exact(&mut dtype).map_err(|_| format!("{name}: truncated dtype"))?;
            if dtype[0] != DTYPE_F32 {
                return Err(format!("{name}: unsupported dtype code {}", dtype[0]));
            }
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut r)? as usize);
            }
            let n: usize = shape.iter().product();
            let nbytes = n.checked_mul(4).ok_or_else(|| format!("{name}: shape overflow"))?;
            if nbytes > r.len() {
                return Err(format!("{name}: data truncated ({} of {nbytes} bytes)", r.len()));
            }
            let (raw, rest) = r.split_at(nbytes);
            r = rest;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(name, Tensor { shape, data });
        }
        if !r.is_empty() {
            return Err(format!("{} trailing bytes after last tensor", r.len()));
        }
        Ok(Self { tensors })
    }
}

fn read_u32(r: &mut &[u8]) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| "unexpected end of archive".to_string())?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> std::result::Result<u64, String> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| "unexpected end of archive".to_string())?;
    Ok(u64::from_le_bytes(b))
}
