//! Turning token contexts into context embeddings, and assembling several
//! compressed contexts into one decoder input.
//!
//! Nothing here takes a query: contexts compress independently of the
//! question, which is what allows the offline index.

use serde::{Deserialize, Serialize};

use crate::corpus::{Specials, TokenId};
use crate::error::{Error, Result};
use crate::float::{gemm, Float, MatRef};
use crate::model::transformer::{self, StackCache};
use crate::model::{CompressorSpec, Item, MixedSequence, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressorKind {
    /// Decoder-architecture compressor: `<AE> t1..tn <CTX>*k`, read the last
    /// hidden states at the `<CTX>` positions.
    Full,
    /// Bidirectional encoder, blocks of `rate` hidden states projected to `d`.
    Light,
}

impl CompressorKind {
    pub fn code(self) -> u8 {
        match self {
            Self::Full => 0,
            Self::Light => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Self::Full),
            1 => Some(Self::Light),
            _ => None,
        }
    }
}

impl std::str::FromStr for CompressorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "light" => Ok(Self::Light),
            other => Err(Error::Config(format!("unknown compressor `{other}` (full|light)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub rate: usize,
    pub kind: CompressorKind,
}

impl CompressionConfig {
    pub fn new(rate: usize, kind: CompressorKind) -> Result<Self> {
        if rate == 0 {
            return Err(Error::Config("compression rate must be >= 1".into()));
        }
        Ok(Self { rate, kind })
    }

    /// Checks that `model` carries the compressor this config asks for.
    pub fn check<T: Float>(&self, model: &Model<T>) -> Result<()> {
        match (self.kind, model.spec().compressor) {
            (CompressorKind::Full, CompressorSpec::Full) => Ok(()),
            (CompressorKind::Light, CompressorSpec::Light { rate, .. }) => {
                if rate == self.rate {
                    Ok(())
                } else {
                    Err(Error::RateMismatch {
                        built: rate,
                        requested: self.rate,
                    })
                }
            }
            (kind, spec) => Err(Error::Config(format!(
                "compressor {kind:?} requested but model carries {spec:?}"
            ))),
        }
    }
}

/// `k` vectors of dimension `dim` compressed from one context.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEmbeddings<T = f32> {
    pub source: String,
    pub k: usize,
    pub dim: usize,
    /// Row-major `k x dim`.
    pub vectors: Vec<T>,
}

impl<T: Float> ContextEmbeddings<T> {
    pub fn new(source: impl Into<String>, k: usize, dim: usize, vectors: Vec<T>) -> Result<Self> {
        if vectors.len() != k * dim {
            return Err(Error::DimensionMismatch {
                expected: k * dim,
                got: vectors.len(),
            });
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite context embedding".into()));
        }
        Ok(Self {
            source: source.into(),
            k,
            dim,
            vectors,
        })
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// Number of embeddings for a context of `n` tokens at `rate`: one per full
/// group of `rate` tokens, never fewer than one.
pub fn embed_count(n: usize, rate: usize) -> usize {
    assert!(rate >= 1, "rate must be >= 1");
    (n / rate).max(1)
}

/// Forward state kept to backpropagate into the compressor.
pub(crate) enum CompressTrace<T> {
    Full {
        cache: StackCache<T>,
        first_ctx: usize,
    },
    Light {
        cache: StackCache<T>,
        blocks: Vec<T>,
        n: usize,
    },
}

pub(crate) fn compress_traced<T: Float>(
    tokens: &[TokenId],
    cfg: &CompressionConfig,
    model: &Model<T>,
) -> Result<(Vec<T>, usize, CompressTrace<T>)> {
    cfg.check(model)?;
    if tokens.is_empty() {
        return Err(Error::Invalid("cannot compress an empty context".into()));
    }
    let n = tokens.len();
    let k = embed_count(n, cfg.rate);
    let lay = model.comp.as_ref().expect("checked compressor");
    let p = &model.store.data;
    match cfg.kind {
        CompressorKind::Full => {
            let mut items: MixedSequence<T> = Vec::with_capacity(n + k + 1);
            items.push(Item::Token(Specials::AE));
            items.extend(tokens.iter().map(|&t| Item::Token(t)));
            items.extend((0..k).map(|_| Item::Token(Specials::CTX)));
            let cache = transformer::forward(lay, p, &items)?;
            let d = lay.dims.dim;
            let first_ctx = n + 1;
            let out = cache.y[first_ctx * d..(first_ctx + k) * d].to_vec();
            Ok((out, k, CompressTrace::Full { cache, first_ctx }))
        }
        CompressorKind::Light => {
            let proj = model.proj.expect("checked projection");
            let items: MixedSequence<T> = tokens.iter().map(|&t| Item::Token(t)).collect();
            let cache = transformer::forward(lay, p, &items)?;
            let b = lay.dims.dim;
            let width = proj.in_dim;
            // k full blocks, or one zero-padded block when n < rate.
            let mut blocks = vec![T::zero(); k * width];
            let take = (k * cfg.rate).min(n) * b;
            blocks[..take].copy_from_slice(&cache.y[..take]);
            let d = proj.out_dim;
            let mut out = Vec::with_capacity(k * d);
            for _ in 0..k {
                out.extend_from_slice(&p[proj.b..proj.b + d]);
            }
            gemm(
                k,
                d,
                width,
                T::one(),
                MatRef::new(&blocks, width),
                MatRef::new(&p[proj.w..proj.w + width * d], d),
                T::one(),
                &mut out,
                d,
            );
            Ok((out, k, CompressTrace::Light { cache, blocks, n }))
        }
    }
}

/// Accumulates compressor gradients given `d loss / d vectors` (`k x d`).
pub(crate) fn compress_backward<T: Float>(
    model: &Model<T>,
    trace: &CompressTrace<T>,
    dvec: &[T],
    grads: &mut [T],
) {
    let lay = model.comp.as_ref().expect("model has a compressor");
    let p = &model.store.data;
    match trace {
        CompressTrace::Full { cache, first_ctx } => {
            let d = lay.dims.dim;
            let mut dy = vec![T::zero(); cache.len() * d];
            dy[first_ctx * d..first_ctx * d + dvec.len()].copy_from_slice(dvec);
            transformer::backward(lay, p, cache, &dy, grads);
        }
        CompressTrace::Light { cache, blocks, n } => {
            let proj = model.proj.expect("light compressor has a projection");
            let (width, d) = (proj.in_dim, proj.out_dim);
            let k = dvec.len() / d;
            gemm(
                width,
                d,
                k,
                T::one(),
                MatRef::t(blocks, width),
                MatRef::new(dvec, d),
                T::one(),
                &mut grads[proj.w..proj.w + width * d],
                d,
            );
            for i in 0..k {
                for (a, &g) in grads[proj.b..proj.b + d].iter_mut().zip(&dvec[i * d..(i + 1) * d]) {
                    *a += g;
                }
            }
            let mut dblocks = vec![T::zero(); k * width];
            gemm(
                k,
                width,
                d,
                T::one(),
                MatRef::new(dvec, d),
                MatRef::t(&p[proj.w..proj.w + width * d], d),
                T::zero(),
                &mut dblocks,
                width,
            );
            let b = lay.dims.dim;
            let mut dy = vec![T::zero(); n * b];
            let take = dy.len().min(dblocks.len());
            dy[..take].copy_from_slice(&dblocks[..take]);
            transformer::backward(lay, p, cache, &dy, grads);
        }
    }
}

fn finish<T: Float>(source: &str, dim: usize, k: usize, vectors: Vec<T>) -> Result<ContextEmbeddings<T>> {
    ContextEmbeddings::new(source, k, dim, vectors)
}

/// Compresses with the decoder-architecture compressor.
pub fn compress_full<T: Float>(
    source: &str,
    tokens: &[TokenId],
    cfg: &CompressionConfig,
    model: &Model<T>,
) -> Result<ContextEmbeddings<T>> {
    if cfg.kind != CompressorKind::Full {
        return Err(Error::Config("compress_full needs kind=full".into()));
    }
    let (v, k, _) = compress_traced(tokens, cfg, model)?;
    finish(source, model.dim(), k, v)
}

/// Compresses with the light encoder and block projection.
pub fn compress_light<T: Float>(
    source: &str,
    tokens: &[TokenId],
    cfg: &CompressionConfig,
    model: &Model<T>,
) -> Result<ContextEmbeddings<T>> {
    if cfg.kind != CompressorKind::Light {
        return Err(Error::Config("compress_light needs kind=light".into()));
    }
    let (v, k, _) = compress_traced(tokens, cfg, model)?;
    finish(source, model.dim(), k, v)
}

pub fn compress<T: Float>(
    source: &str,
    tokens: &[TokenId],
    cfg: &CompressionConfig,
    model: &Model<T>,
) -> Result<ContextEmbeddings<T>> {
    match cfg.kind {
        CompressorKind::Full => compress_full(source, tokens, cfg, model),
        CompressorKind::Light => compress_light(source, tokens, cfg, model),
    }
}

/// Several compressed contexts flattened into decoder items, `[SEP]` between
/// neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiContextInput<T = f32> {
    pub contexts: Vec<ContextEmbeddings<T>>,
    pub items: MixedSequence<T>,
}

impl<T> MultiContextInput<T> {
    pub fn len(&self) -> usize {
        self.items.len()
    }
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Length of an assembled input: every embedding plus one separator between
/// each pair of contexts.
pub fn flattened_len(counts: &[usize]) -> usize {
    counts.iter().sum::<usize>() + counts.len().saturating_sub(1)
}

pub fn assemble_multi<T: Float>(contexts: Vec<ContextEmbeddings<T>>) -> Result<MultiContextInput<T>> {
    let first = contexts
        .first()
        .ok_or_else(|| Error::Invalid("no contexts to assemble".into()))?;
    let dim = first.dim;
    if let Some(c) = contexts.iter().find(|c| c.dim != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: c.dim,
        });
    }
    let counts: Vec<usize> = contexts.iter().map(|c| c.k).collect();
    let mut items = Vec::with_capacity(flattened_len(&counts));
    for (i, c) in contexts.iter().enumerate() {
        if i > 0 {
            items.push(Item::Token(Specials::SEP));
        }
        items.extend((0..c.k).map(|r| Item::Vector(c.row(r).to_vec())));
    }
    Ok(MultiContextInput { contexts, items })
}
