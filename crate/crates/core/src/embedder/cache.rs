//! Embedding store.
//!
//! File layout, all little-endian:
//! `b"PEMB"`, `u32 version = 1`, `u32 dim`, `u32 count`, then per entry
//! `u32 id_len`, `id_len` UTF-8 bytes, `dim` × `f32`.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use super::{EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::corpus::LabeledClip;

const MAGIC: &[u8; 4] = b"PEMB";
const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingCache {
    name: String,
    dim: usize,
    ids: Vec<String>,
    values: Vec<Vec<f32>>,
    index: HashMap<String, usize>,
}

impl EmbeddingCache {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
            ..Self::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    /// Inserts or replaces the vector stored under `id`.
    pub fn put(&mut self, id: &str, vector: &[f32]) -> Result<(), EmbedError> {
        if vector.len() != self.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        match self.index.get(id) {
            Some(&i) => self.values[i] = vector.to_vec(),
            None => {
                self.index.insert(id.to_owned(), self.ids.len());
                self.ids.push(id.to_owned());
                self.values.push(vector.to_vec());
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&[f32], EmbedError> {
        self.index
            .get(id)
            .map(|&i| self.values[i].as_slice())
            .ok_or_else(|| EmbedError::NotFound(id.to_owned()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_BYTES + self.len() * (4 + self.dim * 4));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (id, v) in self.ids.iter().zip(&self.values) {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(name: &str, bytes: &[u8]) -> Result<Self, EmbedError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(EmbedError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(EmbedError::Format(format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut cache = Self::new(name, dim);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|e| EmbedError::Format(e.to_string()))?
                .to_owned();
            let v: Vec<f32> = r
                .take(dim * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cache.put(&id, &v)?;
        }
        if r.pos != bytes.len() {
            return Err(EmbedError::Format("trailing bytes".into()));
        }
        Ok(cache)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "cache".into());
        Self::from_bytes(&name, &bytes)
    }

    /// Reads headerless CSV rows `id,v0,...,v{d-1}`. The dimension is taken
    /// from the first row.
    pub fn import_csv(name: &str, input: impl BufRead) -> Result<Self, EmbedError> {
        let mut cache: Option<Self> = None;
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let id = fields.next().unwrap_or_default().trim();
            let v = fields
                .map(|f| f.trim().parse::<f32>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EmbedError::Format(format!("line {}: {e}", n + 1)))?;
            let c = cache.get_or_insert_with(|| Self::new(name, v.len()));
            c.put(id, &v)?;
        }
        cache.ok_or_else(|| EmbedError::Format("empty CSV".into()))
    }
}

impl EmbeddingProvider for EmbeddingCache {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, clip: &LabeledClip) -> Result<EmbeddingVector, EmbedError> {
        let values = self.get(&clip.cache_key())?.to_vec();
        Ok(EmbeddingVector {
            values,
            spec_name: self.name.clone(),
            clip_id: clip.clip_id.clone(),
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbedError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| EmbedError::Format("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, EmbedError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
