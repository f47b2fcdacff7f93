use serde::{Deserialize, Serialize};

use crate::compression::{assemble_multi, compress, CompressionConfig, ContextEmbeddings};
use crate::corpus::{ChunkStore, TokenId, Tokenizer};
use crate::error::{Error, Result};
use crate::index_store::CompressedIndex;
use crate::model::{MixedSequence, Model};
use crate::retrieval::Bm25Index;

use super::generate::{generate, Answer};
use super::prompt::{build_prompt, check_fits, prompt_items, raw_context_items, PromptTemplate};

/// Where context representations come from once chunks are retrieved.
#[derive(Debug, Clone, Copy)]
pub enum ContextSource<'a> {
    /// Raw chunk tokens, `[SEP]`-joined.
    Raw,
    /// Precomputed embeddings; chunks missing from the index are compressed
    /// on the fly with the index's config.
    Index(&'a CompressedIndex),
    /// Compress every retrieved chunk at query time.
    Live(CompressionConfig),
}

/// Retrieve-then-generate over one checkpoint.
#[derive(Debug, Clone)]
pub struct RagSystem<'a> {
    pub model: &'a Model<f32>,
    pub tok: &'a Tokenizer,
    pub bm25: &'a Bm25Index,
    pub chunks: &'a ChunkStore,
    pub source: ContextSource<'a>,
    /// 0 means closed book.
    pub top_k: usize,
    pub template: PromptTemplate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RagAnswer {
    pub answer: Answer,
    /// Retrieved chunk ids in rank order.
    pub retrieved: Vec<String>,
    pub prompt_items: usize,
}

/// One line of generation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub retrieved: Vec<String>,
    pub prefill_ms: f64,
    pub decode_ms: f64,
    pub new_tokens: usize,
}

impl GenerationRecord {
    pub fn new(id: &str, question: &str, r: &RagAnswer) -> Self {
        Self {
            id: id.to_string(),
            question: question.to_string(),
            answer: r.answer.text.clone(),
            retrieved: r.retrieved.clone(),
            prefill_ms: r.answer.timing.prefill_ms,
            decode_ms: r.answer.timing.decode_ms,
            new_tokens: r.answer.new_tokens(),
        }
    }
}

impl RagSystem<'_> {
    pub fn retrieve(&self, question: &str) -> Result<Vec<String>> {
        if self.top_k == 0 {
            return Ok(Vec::new());
        }
        let hits = match self.bm25.search(question, self.top_k) {
            Ok(h) => h,
            Err(Error::Invalid(_)) => Vec::new(),
            Err(e) => return Err(e),
        };
        if hits.is_empty() {
            log::warn!("no chunk retrieved for {question:?}; answering closed book");
        }
        Ok(hits.into_iter().map(|(id, _)| id).collect())
    }

    fn embeddings(&self, id: &str, tokens: &[TokenId]) -> Result<ContextEmbeddings<f32>> {
        match self.source {
            ContextSource::Live(cfg) => compress(id, tokens, &cfg, self.model),
            ContextSource::Index(index) => match index.lookup(id) {
                Ok(e) => Ok(e.clone()),
                Err(Error::NotFound(_)) => compress(id, tokens, &index.header.config(), self.model),
                Err(e) => Err(e),
            },
            ContextSource::Raw => unreachable!("raw contexts are not embedded"),
        }
    }

    /// The generation prompt for `question` and the retrieved ids.
    pub fn prompt(&self, question: &str) -> Result<(MixedSequence<f32>, Vec<String>)> {
        let retrieved = self.retrieve(question)?;
        let max_len = self.model.max_len();
        if retrieved.is_empty() {
            return Ok((build_prompt(None, question, &self.template, self.tok, max_len)?, retrieved));
        }
        let chunks = retrieved
            .iter()
            .map(|id| self.chunks.get(id))
            .collect::<Result<Vec<_>>>()?;
        let items = match self.source {
            ContextSource::Raw => {
                let toks: Vec<&[TokenId]> = chunks.iter().map(|c| c.tokens.as_slice()).collect();
                let items = prompt_items(
                    &raw_context_items(&toks),
                    &self.template.instruction_tokens(self.tok, question),
                );
                check_fits(items.len(), &self.template, max_len)?;
                items
            }
            _ => {
                let embs = chunks
                    .iter()
                    .map(|c| self.embeddings(&c.id, &c.tokens))
                    .collect::<Result<Vec<_>>>()?;
                let multi = assemble_multi(embs)?;
                build_prompt(Some(&multi), question, &self.template, self.tok, max_len)?
            }
        };
        Ok((items, retrieved))
    }

    pub fn answer(&self, question: &str) -> Result<RagAnswer> {
        let (items, retrieved) = self.prompt(question)?;
        let answer = generate(self.model, &items, &self.template, self.tok)?;
        Ok(RagAnswer {
            answer,
            retrieved,
            prompt_items: items.len(),
        })
    }
}

pub fn rag_answer(system: &RagSystem<'_>, question: &str) -> Result<RagAnswer> {
    system.answer(question)
}
