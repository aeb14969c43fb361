//! Versioned binary container for named tensors plus string metadata.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   kind-specific, e.g. b"SRNASCKP"
//! version    u32
//! n_meta     u32
//!   key_len u32, key utf-8, val_len u32, val utf-8      (n_meta times)
//! n_tensors  u32
//!   name_len u32, name utf-8, shape 4 x u32, data numel x f64   (n_tensors times)
//! checksum   32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! Values are always stored as `f64`, so `f32` models round-trip exactly.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::diffcore::{numel, Tensor4};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, [usize; 4], Vec<f64>)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidArgument(format!("container is missing key `{key}`")))
    }

    pub fn get_parsed<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::InvalidArgument(format!("container key `{key}` has bad value `{raw}`")))
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor4<T>) {
        self.tensors
            .push((name.into(), t.shape(), t.data().iter().map(|v| v.to_f64_lossy()).collect()));
    }

    /// Tensors are consumed in insertion order; `name` must match.
    pub fn reader(&self) -> TensorReader<'_> {
        TensorReader { c: self, pos: 0 }
    }

    pub fn to_bytes(&self, magic: &[u8; 8], version: u32) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(magic);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, shape, data) in &self.tensors {
            put_str(&mut out, name);
            for d in shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 8], version: u32, what: &'static str) -> Result<Self> {
        if bytes.len() < 8 + 4 + 32 || &bytes[..8] != magic {
            return Err(Error::InvalidArgument(format!("not a {what} file (bad magic)")));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum(what.to_string()));
        }
        let mut cur = Cursor { buf: body, pos: 8, what };
        let found = cur.u32()?;
        if found != version {
            return Err(Error::Version {
                what,
                found,
                expected: version,
            });
        }
        let mut c = Container::new();
        for _ in 0..cur.u32()? {
            let k = cur.string()?;
            let v = cur.string()?;
            c.meta.insert(k, v);
        }
        for _ in 0..cur.u32()? {
            let name = cur.string()?;
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = cur.u32()? as usize;
            }
            let n = numel(shape);
            let raw = cur.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|ch| f64::from_le_bytes(ch.try_into().expect("8-byte chunk")))
                .collect();
            c.tensors.push((name, shape, data));
        }
        if cur.pos != body.len() {
            return Err(Error::InvalidArgument(format!("{what}: trailing bytes")));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path, magic: &[u8; 8], version: u32) -> Result<()> {
        std::fs::write(path, self.to_bytes(magic, version)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, magic: &[u8; 8], version: u32, what: &'static str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, magic, version, what)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::InvalidArgument(format!("{}: truncated", self.what)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::InvalidArgument(format!("{}: invalid utf-8", self.what)))
    }
}

pub struct TensorReader<'a> {
    c: &'a Container,
    pos: usize,
}

impl TensorReader<'_> {
    pub fn next<T: Scalar>(&mut self, name: &str) -> Result<Tensor4<T>> {
        let (n, shape, data) = self
            .c
            .tensors
            .get(self.pos)
            .ok_or_else(|| Error::InvalidArgument(format!("missing tensor `{name}`")))?;
        if n != name {
            return Err(Error::InvalidArgument(format!("expected tensor `{name}`, found `{n}`")));
        }
        self.pos += 1;
        Tensor4::from_vec(*shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.c.tensors.len() {
            return Err(Error::InvalidArgument("unexpected trailing tensors".into()));
        }
        Ok(())
    }
}
