//! Tokenization, chunking, QA loading and the synthetic fact corpus.

pub mod chunk;
pub mod jsonl;
pub mod qa;
pub mod synth;
pub mod tokenizer;

pub use chunk::{chunk_corpus, chunks_from_records, Chunk, ChunkRecord, ChunkStore, Document, DEFAULT_CHUNK_SIZE};
pub use qa::{load_qa, QaExample, QaLoad};
pub use synth::{gen_synthetic, SyntheticSet};
pub use tokenizer::{Specials, TokenId, Tokenizer};

/// Builds a tokenizer from documents.
pub fn build_tokenizer(docs: &[Document], vocab_size: usize, seed: u64) -> crate::Result<Tokenizer> {
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    Tokenizer::train(&texts, vocab_size, seed)
}
