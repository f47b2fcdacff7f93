//! Context compression for retrieval-augmented generation.
//!
//! Retrieved passages are compressed into a few context embeddings that a
//! small decoder consumes in place of raw tokens. The crate holds the whole
//! stack: tokenizer and corpus tools, the decoder/encoder/projection models
//! with hand-written backward passes, the compressors, the training
//! objectives, BM25 retrieval, the persisted embedding index, greedy RAG
//! inference, and metrics plus a FLOP/latency profiler.

pub mod compression;
pub mod corpus;
pub mod error;
pub mod evalprof;
pub mod float;
pub mod inference;
pub mod index_store;
pub mod model;
pub mod pipeline;
pub mod retrieval;
pub mod training;

pub use error::{Error, Result};
