//! Versioned binary container of named `f32` arrays.
//!
//! Layout, all integers little-endian: magic `PFNW`, `u32` version, `u32`
//! entry count, then per entry a `u32` name length, the UTF-8 name, a `u32`
//! rank, one `u64` per dimension and the raw `f32` data.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PFNW";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered set of uniquely named arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    entries: Vec<NamedArray>,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(err(format!(
                "truncated file: {what} needs {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if name.is_empty() {
            return Err(err("empty array name"));
        }
        if self.get(&name).is_some() {
            return Err(err(format!("duplicate array name {name:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(err(format!(
                "array {name:?}: shape {shape:?} holds {numel} values, got {}",
                data.len()
            )));
        }
        self.entries.push(NamedArray { name, shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Like [`Container::get`] but a missing entry is an error.
    pub fn require(&self, name: &str) -> Result<&NamedArray> {
        self.get(name)
            .ok_or_else(|| err(format!("missing array {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedArray> {
        self.entries.iter()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(err(format!("bad magic {magic:?}, expected \"PFNW\"")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(err(format!("unsupported version {version}, expected {VERSION}")));
        }
        let count = r.u32("entry count")?;
        let mut out = Self::new();
        for i in 0..count {
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| err(format!("entry {i}: name is not UTF-8")))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                let d = r.u64("dimension")?;
                shape.push(usize::try_from(d).map_err(|_| err(format!("{name}: dimension {d} too large")))?);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| err(format!("{name}: shape {shape:?} overflows")))?;
            let raw = r.take(numel, &format!("data of {name}"))?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            out.push(name, shape, data)?;
        }
        if r.pos != bytes.len() {
            return Err(err(format!("{} trailing bytes after last entry", bytes.len() - r.pos)));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
