//! Offline store of precomputed context embeddings (`.ccix` files).
//!
//! Layout, little-endian:
//!
//! ```text
//! "CCIX" | u32 version | u8 kind | u32 rate | u32 dim | [u8; 32] fingerprint | u64 count
//! per entry: u16 id_len | id (UTF-8) | u32 k | k*dim f32
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::compression::{compress, CompressionConfig, CompressorKind, ContextEmbeddings};
use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::model::{checkpoint, Model};
use crate::retrieval::{put_str, Reader};

pub const MAGIC: &[u8; 4] = b"CCIX";
pub const VERSION: u32 = 1;
/// Bytes before the first entry.
pub const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 4 + 32 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexHeader {
    pub version: u32,
    pub kind: CompressorKind,
    pub rate: u32,
    pub dim: u32,
    pub fingerprint: [u8; 32],
    pub count: u64,
}

impl IndexHeader {
    pub fn config(&self) -> CompressionConfig {
        CompressionConfig {
            rate: self.rate as usize,
            kind: self.kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedIndex {
    pub header: IndexHeader,
    entries: Vec<ContextEmbeddings<f32>>,
    by_id: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildSummary {
    pub count: usize,
    pub total_vectors: usize,
    pub bytes: u64,
    pub wall_ms: f64,
}

impl CompressedIndex {
    pub fn new(header: IndexHeader, entries: Vec<ContextEmbeddings<f32>>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.dim != header.dim as usize {
                return Err(Error::DimensionMismatch {
                    expected: header.dim as usize,
                    got: e.dim,
                });
            }
            if by_id.insert(e.source.clone(), i).is_some() {
                return Err(Error::DuplicateId(e.source.clone()));
            }
        }
        Ok(Self { header, entries, by_id })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ContextEmbeddings<f32>] {
        &self.entries
    }

    pub fn lookup(&self, id: &str) -> Result<&ContextEmbeddings<f32>> {
        self.by_id
            .get(id)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::NotFound(format!("chunk `{id}` not in index")))
    }

    /// Compares the stored fingerprint with `model`'s. With `strict` a
    /// mismatch is an error, otherwise a warning.
    pub fn check_model(&self, model: &Model<f32>, strict: bool) -> Result<()> {
        let active = checkpoint::fingerprint(model);
        if active == self.header.fingerprint {
            return Ok(());
        }
        if strict {
            return Err(Error::FingerprintMismatch {
                index: hex::encode(self.header.fingerprint),
                active: hex::encode(active),
            });
        }
        log::warn!("index fingerprint differs from the active checkpoint");
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        let body: usize = self.entries.iter().map(|e| entry_len(e.source.len(), e.k, e.dim)).sum();
        let mut buf = Vec::with_capacity(HEADER_LEN + body);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&h.version.to_le_bytes());
        buf.push(h.kind.code());
        buf.extend_from_slice(&h.rate.to_le_bytes());
        buf.extend_from_slice(&h.dim.to_le_bytes());
        buf.extend_from_slice(&h.fingerprint);
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            put_str(&mut buf, &e.source)?;
            buf.extend_from_slice(&(e.k as u32).to_le_bytes());
            for v in &e.vectors {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Corrupt {
                offset: 0,
                msg: "not a CCIX file".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Corrupt {
                offset: 4,
                msg: format!("unsupported version {version}"),
            });
        }
        let kind = CompressorKind::from_code(r.u8()?).ok_or_else(|| Error::Corrupt {
            offset: 8,
            msg: "unknown compressor kind".into(),
        })?;
        let rate = r.u32()?;
        let dim = r.u32()?;
        let fingerprint: [u8; 32] = r.take(32)?.try_into().unwrap();
        let count = r.u64()?;
        let header = IndexHeader {
            version,
            kind,
            rate,
            dim,
            fingerprint,
            count,
        };
        let d = dim as usize;
        let mut entries = Vec::with_capacity((count as usize).min(1 << 20));
        for _ in 0..count {
            let at = r.pos();
            let id = r.string()?;
            let k = r.u32()? as usize;
            let raw = r.take(k * d * 4)?;
            let vectors: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            let e = ContextEmbeddings::new(id, k, d, vectors).map_err(|e| Error::Corrupt {
                offset: at as u64,
                msg: e.to_string(),
            })?;
            entries.push(e);
        }
        if !r.done() {
            return Err(r.corrupt("trailing bytes after last entry"));
        }
        Self::new(header, entries)
    }

    pub fn save(&self, path: &Path) -> Result<u64> {
        let bytes = self.to_bytes()?;
        fs::write(path, &bytes)?;
        Ok(bytes.len() as u64)
    }
}

/// Serialized size of one entry.
pub fn entry_len(id_len: usize, k: usize, dim: usize) -> usize {
    2 + id_len + 4 + k * dim * 4
}

/// Compresses every chunk with `model` (in parallel, written in input
/// order) and returns the in-memory index.
pub fn compress_chunks(chunks: &[Chunk], cfg: &CompressionConfig, model: &Model<f32>) -> Result<CompressedIndex> {
    cfg.check(model)?;
    let entries: Vec<ContextEmbeddings<f32>> = chunks
        .par_iter()
        .map(|c| compress(&c.id, &c.tokens, cfg, model))
        .collect::<Result<_>>()?;
    let header = IndexHeader {
        version: VERSION,
        kind: cfg.kind,
        rate: cfg.rate as u32,
        dim: model.dim() as u32,
        fingerprint: checkpoint::fingerprint(model),
        count: entries.len() as u64,
    };
    CompressedIndex::new(header, entries)
}

pub fn build_compressed_index(
    chunks: &[Chunk],
    cfg: &CompressionConfig,
    model: &Model<f32>,
    out: &Path,
) -> Result<BuildSummary> {
    let start = Instant::now();
    let index = compress_chunks(chunks, cfg, model)?;
    let bytes = index.save(out)?;
    Ok(BuildSummary {
        count: index.len(),
        total_vectors: index.entries.iter().map(|e| e.k).sum(),
        bytes,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

pub fn load_index(path: &Path) -> Result<CompressedIndex> {
    CompressedIndex::from_bytes(&fs::read(path)?)
}
