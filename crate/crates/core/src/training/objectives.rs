//! The three supervised objectives. Each builds a decoder input whose
//! context embeddings come from a traced compressor pass, so gradients flow
//! from the decoder loss back into the compressor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compression::{compress_backward, compress_traced, CompressTrace, CompressionConfig};
use crate::corpus::{Specials, TokenId, Tokenizer};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::inference::prompt::{prompt_items, raw_context_items, PromptTemplate};
use crate::model::params::Group;
use crate::model::transformer;
use crate::model::{Item, MixedSequence, Model};

use super::loss::next_token_loss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "AE")]
    Ae,
    #[serde(rename = "LMCE")]
    Lmce,
    #[serde(rename = "FT")]
    Finetune,
}

impl Task {
    pub fn label(self) -> &'static str {
        match self {
            Self::Ae => "AE",
            Self::Lmce => "LMCE",
            Self::Finetune => "FT",
        }
    }
}

/// One pre-training example: auto-encode the whole chunk, or continue it
/// from the compressed first `split` tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PretrainSample {
    pub task: Task,
    pub tokens: Vec<TokenId>,
    pub split: Option<usize>,
}

impl PretrainSample {
    pub fn ae(tokens: Vec<TokenId>) -> Self {
        Self {
            task: Task::Ae,
            tokens,
            split: None,
        }
    }

    pub fn lmce(tokens: Vec<TokenId>, split: usize) -> Result<Self> {
        if split == 0 || split >= tokens.len() {
            return Err(Error::Invalid(format!(
                "split {split} outside [1, {})",
                tokens.len()
            )));
        }
        Ok(Self {
            task: Task::Lmce,
            tokens,
            split: Some(split),
        })
    }
}

/// Draws AE with probability `p_ae`, otherwise LMCE.
pub fn sample_task<R: Rng + ?Sized>(rng: &mut R, p_ae: f64) -> Task {
    if rng.random::<f64>() < p_ae {
        Task::Ae
    } else {
        Task::Lmce
    }
}

/// LMCE split point, uniform in `[ceil(T/4), floor(3T/4)]` clamped to
/// `[1, T-1]`. `None` when `T < 2`.
pub fn sample_split<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Option<usize> {
    if len < 2 {
        return None;
    }
    let lo = len.div_ceil(4).clamp(1, len - 1);
    let hi = (3 * len / 4).clamp(lo, len - 1);
    Some(rng.random_range(lo..=hi))
}

/// A retrieved context resolved to its tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextRef {
    pub id: String,
    pub tokens: Vec<TokenId>,
}

/// One instruction-tuning example with its retrieved contexts in rank order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneSample {
    pub id: String,
    pub question: String,
    pub instruction: Vec<TokenId>,
    pub contexts: Vec<ContextRef>,
    pub response: Vec<TokenId>,
}

impl FinetuneSample {
    pub fn new(
        id: impl Into<String>,
        question: &str,
        answer: &str,
        contexts: Vec<ContextRef>,
        template: &PromptTemplate,
        tok: &Tokenizer,
    ) -> Result<Self> {
        let response = template.response_tokens(tok, answer);
        if response.is_empty() {
            return Err(Error::Invalid("empty response".into()));
        }
        Ok(Self {
            id: id.into(),
            question: question.to_string(),
            instruction: template.instruction_tokens(tok, question),
            contexts,
            response,
        })
    }
}

/// How retrieved contexts reach the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ContextMode {
    ClosedBook,
    Raw,
    Compressed(CompressionConfig),
}

/// A decoder input with per-position next-token targets. Position `t`
/// predicts `targets[t]` when `mask[t]`.
#[derive(Debug, Clone)]
pub struct Assembled<T> {
    pub items: MixedSequence<T>,
    pub targets: Vec<TokenId>,
    pub mask: Vec<bool>,
}

impl<T> Assembled<T> {
    pub fn supervised(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

struct Traced<T> {
    trace: CompressTrace<T>,
    start: usize,
    k: usize,
}

struct Graph<T> {
    input: Assembled<T>,
    traces: Vec<Traced<T>>,
}

fn supervise<T>(items: MixedSequence<T>, from: usize, targets: &[TokenId]) -> Assembled<T> {
    let n = items.len();
    let mut t = vec![Specials::PAD; n];
    let mut m = vec![false; n];
    t[from..from + targets.len()].copy_from_slice(targets);
    m[from..from + targets.len()].fill(true);
    Assembled {
        items,
        targets: t,
        mask: m,
    }
}

fn traced_context<T: Float>(
    model: &Model<T>,
    cfg: &CompressionConfig,
    tokens: &[TokenId],
    items: &mut MixedSequence<T>,
    traces: &mut Vec<Traced<T>>,
) -> Result<()> {
    let (vecs, k, trace) = compress_traced(tokens, cfg, model)?;
    let d = model.dim();
    let start = items.len();
    items.extend((0..k).map(|i| Item::Vector(vecs[i * d..(i + 1) * d].to_vec())));
    traces.push(Traced { trace, start, k });
    Ok(())
}

/// `E ‖ BOS ‖ x1..x_{T-1}` predicting every `x_t`.
fn ae_graph<T: Float>(model: &Model<T>, sample: &PretrainSample, cfg: &CompressionConfig) -> Result<Graph<T>> {
    if sample.task != Task::Ae {
        return Err(Error::Invalid("ae objective needs an AE sample".into()));
    }
    let x = &sample.tokens;
    let mut items = Vec::new();
    let mut traces = Vec::new();
    traced_context(model, cfg, x, &mut items, &mut traces)?;
    let k = items.len();
    items.push(Item::Token(Specials::BOS));
    items.extend(x[..x.len() - 1].iter().map(|&t| Item::Token(t)));
    Ok(Graph {
        input: supervise(items, k, x),
        traces,
    })
}

/// `E_A ‖ BOS ‖ x_{j+1}..x_{T-1}` predicting only `x_{j+1}..x_T`.
fn lmce_graph<T: Float>(model: &Model<T>, sample: &PretrainSample, cfg: &CompressionConfig) -> Result<Graph<T>> {
    let j = match (sample.task, sample.split) {
        (Task::Lmce, Some(j)) if j >= 1 && j < sample.tokens.len() => j,
        (Task::Lmce, _) => return Err(Error::Invalid("LMCE split out of range".into())),
        _ => return Err(Error::Invalid("lmce objective needs an LMCE sample".into())),
    };
    let (xa, xb) = sample.tokens.split_at(j);
    let mut items = Vec::new();
    let mut traces = Vec::new();
    traced_context(model, cfg, xa, &mut items, &mut traces)?;
    let k = items.len();
    items.push(Item::Token(Specials::BOS));
    items.extend(xb[..xb.len() - 1].iter().map(|&t| Item::Token(t)));
    Ok(Graph {
        input: supervise(items, k, xb),
        traces,
    })
}

/// `BOS ‖ contexts ‖ instruction ‖ R` predicting `R ‖ EOS`.
fn ft_graph<T: Float>(
    model: &Model<T>,
    sample: &FinetuneSample,
    mode: &ContextMode,
    top_k: usize,
) -> Result<Graph<T>> {
    let ctxs = &sample.contexts[..sample.contexts.len().min(top_k)];
    let mut traces = Vec::new();
    let context: MixedSequence<T> = match mode {
        ContextMode::ClosedBook => Vec::new(),
        ContextMode::Raw => {
            let toks: Vec<&[TokenId]> = ctxs.iter().map(|c| c.tokens.as_slice()).collect();
            raw_context_items(&toks)
        }
        ContextMode::Compressed(cfg) => {
            let mut items = Vec::new();
            for (i, c) in ctxs.iter().enumerate() {
                if i > 0 {
                    items.push(Item::Token(Specials::SEP));
                }
                traced_context(model, cfg, &c.tokens, &mut items, &mut traces)?;
            }
            items
        }
    };
    // Context items sit after BOS.
    for t in &mut traces {
        t.start += 1;
    }
    let mut items = prompt_items(&context, &sample.instruction);
    let first = items.len() - 1;
    items.extend(sample.response.iter().map(|&t| Item::Token(t)));
    let mut targets = sample.response.clone();
    targets.push(Specials::EOS);
    if items.len() > model.max_len() {
        return Err(Error::LengthOverflow {
            len: items.len(),
            max: model.max_len(),
        });
    }
    Ok(Graph {
        input: supervise(items, first, &targets),
        traces,
    })
}

fn run_graph<T: Float>(model: &Model<T>, graph: Graph<T>, grads: Option<&mut [T]>) -> Result<T> {
    let lay = model.decoder_layout();
    let p = &model.store.data;
    let Assembled { items, targets, mask } = &graph.input;
    let positions: Vec<usize> = (0..items.len()).filter(|&t| mask[t]).collect();
    let cache = transformer::forward(lay, p, items)?;
    let logits = transformer::logits_at(lay, p, &cache, &positions);
    let sel_targets: Vec<TokenId> = positions.iter().map(|&t| targets[t]).collect();
    let (loss, dlogits) = next_token_loss(&logits, model.vocab(), &sel_targets, &vec![true; positions.len()])?;
    let Some(grads) = grads else { return Ok(loss) };

    let d = model.dim();
    let mut dy = vec![T::zero(); items.len() * d];
    transformer::head_backward(lay, p, &cache, &positions, &dlogits, &mut dy, grads);
    let dx = transformer::backward(lay, p, &cache, &dy, grads);
    if model.store.is_group_trainable(Group::Compressor) {
        for t in &graph.traces {
            compress_backward(model, &t.trace, &dx[t.start * d..(t.start + t.k) * d], grads);
        }
    }
    model.store.mask_frozen(grads);
    Ok(loss)
}

/// Auto-encoding loss; accumulates gradients into `grads` when given.
pub fn ae_loss<T: Float>(
    model: &Model<T>,
    sample: &PretrainSample,
    cfg: &CompressionConfig,
    grads: Option<&mut [T]>,
) -> Result<T> {
    run_graph(model, ae_graph(model, sample, cfg)?, grads)
}

/// Continuation loss over the tokens after the split.
pub fn lmce_loss<T: Float>(
    model: &Model<T>,
    sample: &PretrainSample,
    cfg: &CompressionConfig,
    grads: Option<&mut [T]>,
) -> Result<T> {
    run_graph(model, lmce_graph(model, sample, cfg)?, grads)
}

pub fn pretrain_loss<T: Float>(
    model: &Model<T>,
    sample: &PretrainSample,
    cfg: &CompressionConfig,
    grads: Option<&mut [T]>,
) -> Result<T> {
    match sample.task {
        Task::Ae => ae_loss(model, sample, cfg, grads),
        Task::Lmce => lmce_loss(model, sample, cfg, grads),
        Task::Finetune => Err(Error::Invalid("fine-tune sample in pre-training".into())),
    }
}

/// Response-only instruction-tuning loss over the first `top_k` contexts.
pub fn ft_loss<T: Float>(
    model: &Model<T>,
    sample: &FinetuneSample,
    mode: &ContextMode,
    top_k: usize,
    grads: Option<&mut [T]>,
) -> Result<T> {
    run_graph(model, ft_graph(model, sample, mode, top_k)?, grads)
}

/// The decoder input and mask the AE objective trains on.
pub fn assemble_ae<T: Float>(model: &Model<T>, sample: &PretrainSample, cfg: &CompressionConfig) -> Result<Assembled<T>> {
    Ok(ae_graph(model, sample, cfg)?.input)
}

pub fn assemble_lmce<T: Float>(model: &Model<T>, sample: &PretrainSample, cfg: &CompressionConfig) -> Result<Assembled<T>> {
    Ok(lmce_graph(model, sample, cfg)?.input)
}

pub fn assemble_ft<T: Float>(
    model: &Model<T>,
    sample: &FinetuneSample,
    mode: &ContextMode,
    top_k: usize,
) -> Result<Assembled<T>> {
    Ok(ft_graph(model, sample, mode, top_k)?.input)
}
