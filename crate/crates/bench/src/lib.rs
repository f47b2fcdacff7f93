//! Shared fixtures for the benchmarks.

use ctxcomp_core::compression::CompressorKind;
use ctxcomp_core::model::{DecoderConfig, Model};
use ctxcomp_core::pipeline::{model_spec, World, WorldConfig};

/// A small synthetic world with its tokenizer and BM25 index.
pub fn world(n_entities: usize) -> World {
    World::synthetic(&WorldConfig {
        n_entities,
        n_questions: 50,
        vocab_size: 1024,
        ..Default::default()
    })
    .expect("synthetic world")
}

/// Desk-sized decoder with a compressor, randomly initialised.
pub fn model(vocab: usize, kind: CompressorKind, rate: usize) -> Model<f32> {
    Model::init(model_spec(DecoderConfig::desk(vocab, 512), Some(kind), rate), 0).expect("model init")
}
