//! `UEB1` binary embedding files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"UEB1"
//! dim    u32
//! count  u64
//! count × { id_len u32, id [u8; id_len] (UTF-8), vector [f32; dim] }
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"UEB1";

/// Utterance id → fixed-width vector, in insertion (file) order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: IndexMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::contract(format!("embedding dim {dim} out of range")));
        }
        Ok(Self {
            dim,
            entries: IndexMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Adds an entry; rejects duplicate ids, wrong widths and non-finite values.
    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::integrity(format!(
                "embedding {id} has {} components, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if let Some(pos) = vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::integrity(format!(
                "embedding {id} has non-finite component {pos}"
            )));
        }
        if self.entries.contains_key(&id) {
            return Err(Error::integrity(format!("duplicate embedding id {id}")));
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.entries.keys().map(|k| 4 + k.len() + 4 * self.dim).sum();
        let mut out = Vec::with_capacity(16 + payload);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (id, vector) in &self.entries {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, offset: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != EMBEDDING_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:?}, expected \"UEB1\""),
            });
        }
        let dim = cur.u32("dim")? as usize;
        if dim == 0 {
            return Err(Error::Format {
                offset: 4,
                message: "dim must be positive".into(),
            });
        }
        let count = cur.u64("count")?;
        let mut table = EmbeddingTable::new(dim)?;
        for entry in 0..count {
            let id_offset = cur.offset;
            let id_len = cur.u32("id length")? as usize;
            let id_bytes = cur.take(id_len, "id")?;
            let id = std::str::from_utf8(id_bytes).map_err(|_| Error::Format {
                offset: id_offset as u64 + 4,
                message: format!("entry {entry} id is not valid UTF-8"),
            })?;
            let raw = cur.take(4 * dim, "vector")?;
            let vector = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            table.insert(id, vector)?;
        }
        if cur.offset != bytes.len() {
            return Err(Error::Format {
                offset: cur.offset as u64,
                message: format!("{} trailing bytes after {count} entries", bytes.len() - cur.offset),
            });
        }
        Ok(table)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.offset;
        if remaining < n {
            return Err(Error::Format {
                offset: self.offset as u64,
                message: format!("truncated {what}: need {n} bytes, {remaining} left"),
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut arr = [0u8; 8];
        arr.copy_from_slice(b);
        Ok(u64::from_le_bytes(arr))
    }
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::from_bytes(&bytes)
}

pub fn write_embeddings(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, table.to_bytes()).map_err(|e| Error::io(path, e))
}
