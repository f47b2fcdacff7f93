use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{Specials, TokenId, Tokenizer};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::model::transformer::{self, KvCache};
use crate::model::{Item, Model};

use super::prompt::PromptTemplate;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub prefill_ms: f64,
    pub decode_ms: f64,
}

impl Timing {
    pub fn total_ms(&self) -> f64 {
        self.prefill_ms + self.decode_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub text: String,
    /// Generated ids, EOS excluded.
    pub tokens: Vec<TokenId>,
    /// Argmax evaluations performed (EOS included).
    pub steps: usize,
    pub timing: Timing,
}

impl Answer {
    pub fn new_tokens(&self) -> usize {
        self.tokens.len()
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: Float>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Greedy continuation of `prompt`: at most `max_new` tokens, stopping early
/// at EOS when `stop_at_eos`.
pub fn generate_tokens<T: Float>(
    model: &Model<T>,
    prompt: &[Item<T>],
    max_new: usize,
    stop_at_eos: bool,
) -> Result<(Vec<TokenId>, usize, Timing)> {
    if prompt.is_empty() {
        return Err(Error::Invalid("empty prompt".into()));
    }
    let lay = model.decoder_layout();
    let p = &model.store.data;
    let mut timing = Timing::default();
    let mut out = Vec::new();
    if max_new == 0 {
        return Ok((out, 0, timing));
    }

    let t0 = Instant::now();
    let cache = transformer::forward(lay, p, prompt)?;
    let mut logits = transformer::logits_at(lay, p, &cache, &[prompt.len() - 1]);
    let mut kv = KvCache::from_forward(lay, &cache);
    drop(cache);
    timing.prefill_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = Instant::now();
    let mut steps = 0;
    loop {
        let next = argmax(&logits) as TokenId;
        steps += 1;
        if stop_at_eos && next == Specials::EOS {
            break;
        }
        out.push(next);
        if out.len() == max_new {
            break;
        }
        let y = transformer::decode_step(lay, p, &mut kv, &Item::Token(next))?;
        logits = transformer::head_logits(lay, p, &y);
    }
    timing.decode_ms = t1.elapsed().as_secs_f64() * 1e3;
    Ok((out, steps, timing))
}

/// Greedy answer under `template`'s length and EOS policy.
pub fn generate<T: Float>(
    model: &Model<T>,
    prompt: &[Item<T>],
    template: &PromptTemplate,
    tok: &Tokenizer,
) -> Result<Answer> {
    let (tokens, steps, timing) = generate_tokens(model, prompt, template.max_new_tokens, template.stop_at_eos)?;
    Ok(Answer {
        text: tok.decode(&tokens).trim().to_string(),
        tokens,
        steps,
        timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, CompressorSpec, DecoderConfig, ModelSpec};

    fn model() -> Model<f32> {
        init_params(
            ModelSpec {
                decoder: DecoderConfig {
                    n_layers: 2,
                    dim: 16,
                    n_heads: 2,
                    d_ff: 32,
                    vocab: 300,
                    max_len: 64,
                },
                compressor: CompressorSpec::None,
            },
            4,
        )
        .unwrap()
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0f32; 4]), 0);
    }

    #[test]
    fn eos_peaked_model_answers_empty_in_one_step() {
        let mut m = model();
        // Zero head except the EOS column: every position's argmax is EOS.
        let lay = m.decoder_layout().clone();
        let head = lay.head.unwrap();
        let (d, v) = (16, 300);
        for r in 0..d {
            for c in 0..v {
                m.store.data[head + r * v + c] = 0.0;
            }
        }
        // Final norm collapses to its bias, so the hidden state is e0.
        for i in 0..d {
            m.store.data[lay.lnf_g + i] = 0.0;
            m.store.data[lay.lnf_b + i] = if i == 0 { 1.0 } else { 0.0 };
        }
        m.store.data[head + Specials::EOS as usize] = 10.0;
        let prompt: Vec<Item<f32>> = vec![Item::Token(Specials::BOS), Item::Token(100)];
        let (toks, steps, _) = generate_tokens(&m, &prompt, 10, true).unwrap();
        assert!(toks.is_empty());
        assert_eq!(steps, 1);
    }

    #[test]
    fn cached_decoding_matches_full_recompute() {
        let m = model();
        let mut items: Vec<Item<f32>> = vec![Item::Token(Specials::BOS), Item::Token(40), Item::Token(41)];
        let (toks, _, _) = generate_tokens(&m, &items, 8, false).unwrap();
        assert_eq!(toks.len(), 8);
        for &t in &toks {
            let logits = m.decoder_forward(&items).unwrap();
            let last = &logits[(items.len() - 1) * 300..];
            assert_eq!(argmax(last) as TokenId, t);
            items.push(Item::Token(t));
        }
    }

    #[test]
    fn deterministic() {
        let m = model();
        let items: Vec<Item<f32>> = vec![Item::Token(Specials::BOS), Item::Token(77)];
        let a = generate_tokens(&m, &items, 12, true).unwrap();
        let b = generate_tokens(&m, &items, 12, true).unwrap();
        assert_eq!((a.0, a.1), (b.0, b.1));
    }

    #[test]
    fn overflow_is_reported() {
        let m = model();
        let items: Vec<Item<f32>> = (0..60).map(|i| Item::Token(20 + i)).collect();
        assert!(matches!(
            generate_tokens(&m, &items, 10, false),
            Err(Error::LengthOverflow { .. })
        ));
    }
}
