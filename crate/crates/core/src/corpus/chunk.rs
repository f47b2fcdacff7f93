use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tokenizer::{TokenId, Tokenizer};

/// A source document, as stored in corpus JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

/// A fixed-budget span of one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    /// `<doc_id>#<chunk_index>`
    pub id: String,
    pub tokens: Vec<TokenId>,
    pub text: String,
}

/// Chunked-corpus JSONL record. `tokens` is optional on input; without it
/// the text is re-encoded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<TokenId>>,
}

impl From<&Chunk> for ChunkRecord {
    fn from(c: &Chunk) -> Self {
        Self {
            id: c.id.clone(),
            text: c.text.clone(),
            tokens: Some(c.tokens.clone()),
        }
    }
}

pub const DEFAULT_CHUNK_SIZE: usize = 64;

/// Splits every document into consecutive, non-overlapping chunks of
/// `chunk_size` tokens. Only a document's last chunk may be shorter; chunks
/// never span two documents.
pub fn chunk_corpus(docs: &[Document], tok: &Tokenizer, chunk_size: usize) -> Vec<Chunk> {
    assert!(chunk_size >= 1, "chunk_size must be positive");
    docs.par_iter()
        .map(|d| split_tokens(&d.id, &tok.encode(&d.text), tok, chunk_size))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn split_tokens(doc_id: &str, tokens: &[TokenId], tok: &Tokenizer, size: usize) -> Vec<Chunk> {
    tokens
        .chunks(size)
        .enumerate()
        .map(|(i, t)| Chunk {
            id: format!("{doc_id}#{i}"),
            tokens: t.to_vec(),
            text: tok.decode(t),
        })
        .collect()
}

/// Rebuilds chunks from chunked-corpus records.
pub fn chunks_from_records(records: &[ChunkRecord], tok: &Tokenizer) -> Vec<Chunk> {
    records
        .iter()
        .map(|r| Chunk {
            id: r.id.clone(),
            tokens: r.tokens.clone().unwrap_or_else(|| tok.encode(&r.text)),
            text: r.text.clone(),
        })
        .collect()
}

/// Chunks addressable by id.
#[derive(Debug, Clone, Default)]
pub struct ChunkStore {
    chunks: Vec<Chunk>,
    by_id: HashMap<String, usize>,
}

impl ChunkStore {
    pub fn new(chunks: Vec<Chunk>) -> crate::Result<Self> {
        let mut by_id = HashMap::with_capacity(chunks.len());
        for (i, c) in chunks.iter().enumerate() {
            if by_id.insert(c.id.clone(), i).is_some() {
                return Err(crate::Error::DuplicateId(c.id.clone()));
            }
        }
        Ok(Self { chunks, by_id })
    }

    pub fn get(&self, id: &str) -> crate::Result<&Chunk> {
        self.by_id
            .get(id)
            .map(|&i| &self.chunks[i])
            .ok_or_else(|| crate::Error::NotFound(format!("chunk `{id}`")))
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}
