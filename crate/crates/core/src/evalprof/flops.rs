//! Analytic decoder cost, multiply-add = 2 FLOPs.
//!
//! Per position at prefix length `s`: `L·(8d² + 4·d·d_ff + 4·d·s) + 2·d·V`
//! (QKV and output projections, feed-forward, attention scores and mixing,
//! LM head). Norms, softmax and activations are left out. With
//! `d_ff = 4d` the first two terms are the familiar `24d²`.

use serde::{Deserialize, Serialize};

use crate::model::DecoderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopModelConfig {
    pub n_layers: u64,
    pub dim: u64,
    pub d_ff: u64,
    pub vocab: u64,
}

impl From<&DecoderConfig> for FlopModelConfig {
    fn from(c: &DecoderConfig) -> Self {
        Self {
            n_layers: c.n_layers as u64,
            dim: c.dim as u64,
            d_ff: c.d_ff as u64,
            vocab: c.vocab as u64,
        }
    }
}

impl FlopModelConfig {
    fn dense_per_layer(&self) -> u64 {
        8 * self.dim * self.dim + 4 * self.dim * self.d_ff
    }
}

/// Cost of processing one position that attends over `s` positions.
pub fn decode_step_flops(s: u64, cfg: &FlopModelConfig) -> u64 {
    assert!(s >= 1, "context length must be >= 1");
    cfg.n_layers * (cfg.dense_per_layer() + 4 * cfg.dim * s) + 2 * cfg.dim * cfg.vocab
}

/// Cost of a prompt of `s` positions, closed form of the per-position sum.
pub fn prefill_flops(s: u64, cfg: &FlopModelConfig) -> u64 {
    assert!(s >= 1, "prompt length must be >= 1");
    s * cfg.n_layers * cfg.dense_per_layer() + cfg.n_layers * 4 * cfg.dim * s * (s + 1) / 2 + 2 * cfg.dim * cfg.vocab * s
}
