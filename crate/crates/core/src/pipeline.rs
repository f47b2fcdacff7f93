//! Stage wiring shared by the command line and the end-to-end tests:
//! corpus world building, fine-tuning set construction, evaluation and
//! reconstruction scoring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compression::{compress, CompressionConfig, CompressorKind};
use crate::corpus::{
    build_tokenizer, chunk_corpus, gen_synthetic, Chunk, ChunkStore, Document, QaExample, Specials, Tokenizer,
    DEFAULT_CHUNK_SIZE,
};
use crate::error::Result;
use crate::evalprof::{rouge_l, ExampleMetrics, MetricReport};
use crate::inference::{generate_tokens, GenerationRecord, PromptTemplate, RagSystem};
use crate::model::{CompressorSpec, DecoderConfig, EncoderConfig, Item, Model, ModelSpec};
use crate::retrieval::{Bm25Index, Bm25Params};
use crate::training::{ContextRef, FinetuneSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub n_entities: usize,
    pub n_questions: usize,
    pub vocab_size: usize,
    pub chunk_size: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_entities: 1000,
            n_questions: 500,
            vocab_size: 4096,
            chunk_size: DEFAULT_CHUNK_SIZE,
            seed: 0,
        }
    }
}

/// Everything downstream of the raw corpus.
#[derive(Debug, Clone)]
pub struct World {
    pub documents: Vec<Document>,
    pub tok: Tokenizer,
    pub chunks: ChunkStore,
    pub bm25: Bm25Index,
    pub qa: Vec<QaExample>,
}

impl World {
    pub fn synthetic(cfg: &WorldConfig) -> Result<Self> {
        let set = gen_synthetic(cfg.n_entities, cfg.n_questions, cfg.seed);
        let tok = build_tokenizer(&set.documents, cfg.vocab_size, cfg.seed)?;
        Self::from_parts(set.documents, tok, cfg.chunk_size, set.questions)
    }

    pub fn from_parts(documents: Vec<Document>, tok: Tokenizer, chunk_size: usize, qa: Vec<QaExample>) -> Result<Self> {
        let chunks = chunk_corpus(&documents, &tok, chunk_size);
        let bm25 = Bm25Index::from_chunks(&chunks, Bm25Params::default())?;
        Ok(Self {
            documents,
            tok,
            chunks: ChunkStore::new(chunks)?,
            bm25,
            qa,
        })
    }

    pub fn chunk_tokens(&self) -> Vec<Vec<u32>> {
        self.chunks.chunks().iter().map(|c| c.tokens.clone()).collect()
    }

    /// Fine-tuning samples with their top-`top_k` BM25 contexts fetched once.
    pub fn finetune_samples(
        &self,
        qa: &[QaExample],
        template: &PromptTemplate,
        top_k: usize,
    ) -> Result<Vec<FinetuneSample>> {
        qa.iter()
            .map(|ex| {
                let hits = if top_k == 0 { Vec::new() } else { self.bm25.search(&ex.question, top_k)? };
                let contexts = hits
                    .iter()
                    .map(|(id, _)| {
                        Ok(ContextRef {
                            id: id.clone(),
                            tokens: self.chunks.get(id)?.tokens.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                FinetuneSample::new(&ex.id, &ex.question, &ex.answers[0], contexts, template, &self.tok)
            })
            .collect()
    }
}

/// Distinct chunks BM25 returns for any of `questions`, in first-seen order.
pub fn retrieved_chunks(world: &World, questions: &[String], top_k: usize) -> Result<Vec<Chunk>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    if top_k == 0 {
        return Ok(out);
    }
    for q in questions {
        for (id, _) in world.bm25.search(q, top_k)? {
            if seen.insert(id.clone()) {
                out.push(world.chunks.get(&id)?.clone());
            }
        }
    }
    Ok(out)
}

/// Held-out split: the last `n_eval` examples evaluate, the rest train.
pub fn split_qa(qa: &[QaExample], n_eval: usize) -> (Vec<QaExample>, Vec<QaExample>) {
    let cut = qa.len().saturating_sub(n_eval);
    (qa[..cut].to_vec(), qa[cut..].to_vec())
}

/// Decoder plus the requested compressor. `kind = None` builds a plain
/// decoder. The light encoder shares the decoder's vocabulary and length.
pub fn model_spec(decoder: DecoderConfig, kind: Option<CompressorKind>, rate: usize) -> ModelSpec {
    let compressor = match kind {
        None => CompressorSpec::None,
        Some(CompressorKind::Full) => CompressorSpec::Full,
        Some(CompressorKind::Light) => CompressorSpec::Light {
            encoder: EncoderConfig::desk(decoder.vocab, decoder.max_len),
            rate,
        },
    };
    ModelSpec { decoder, compressor }
}

/// Answers every question and scores it.
pub fn evaluate(
    system: &RagSystem<'_>,
    qa: &[QaExample],
    dataset: &str,
) -> Result<(MetricReport, Vec<GenerationRecord>)> {
    let answered: Vec<(ExampleMetrics, GenerationRecord)> = qa
        .par_iter()
        .map(|ex| {
            let r = system.answer(&ex.question)?;
            Ok((
                ExampleMetrics::score(&ex.id, &r.answer.text, &ex.answers),
                GenerationRecord::new(&ex.id, &ex.question, &r),
            ))
        })
        .collect::<Result<_>>()?;
    let (metrics, records) = answered.into_iter().unzip();
    Ok((MetricReport::new(dataset, metrics), records))
}

/// Greedy reconstruction of `chunk` from its own embeddings: `E ‖ BOS`
/// continued for as many tokens as the chunk has.
pub fn reconstruct(model: &Model<f32>, cfg: &CompressionConfig, chunk: &Chunk) -> Result<Vec<u32>> {
    let e = compress(&chunk.id, &chunk.tokens, cfg, model)?;
    let mut items: Vec<Item<f32>> = (0..e.k).map(|i| Item::Vector(e.row(i).to_vec())).collect();
    items.push(Item::Token(Specials::BOS));
    Ok(generate_tokens(model, &items, chunk.tokens.len(), false)?.0)
}

/// Mean ROUGE-L of greedy reconstructions against the chunk text.
pub fn reconstruction_rouge(model: &Model<f32>, cfg: &CompressionConfig, chunks: &[Chunk], tok: &Tokenizer) -> Result<f64> {
    if chunks.is_empty() {
        return Ok(0.0);
    }
    let scores: Vec<f64> = chunks
        .par_iter()
        .map(|c| Ok(rouge_l(&tok.decode(&reconstruct(model, cfg, c)?), &c.text)))
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
