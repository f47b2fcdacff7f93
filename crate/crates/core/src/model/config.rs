use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the causal decoder language model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub n_layers: usize,
    pub dim: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub max_len: usize,
}

impl DecoderConfig {
    /// Desk-scale defaults: L=4, d=64, 4 heads, d_ff=4d.
    pub fn desk(vocab: usize, max_len: usize) -> Self {
        Self {
            n_layers: 4,
            dim: 64,
            n_heads: 4,
            d_ff: 256,
            vocab,
            max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_stack("decoder", self.n_layers, self.dim, self.n_heads, self.d_ff, self.vocab, self.max_len)
    }
}

/// Shape of the lightweight bidirectional encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub dim: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub max_len: usize,
}

impl EncoderConfig {
    /// Desk-scale defaults: L=2, b=32, 4 heads, d_ff=4b.
    pub fn desk(vocab: usize, max_len: usize) -> Self {
        Self {
            n_layers: 2,
            dim: 32,
            n_heads: 4,
            d_ff: 128,
            vocab,
            max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_stack("encoder", self.n_layers, self.dim, self.n_heads, self.d_ff, self.vocab, self.max_len)
    }
}

fn validate_stack(
    what: &str,
    n_layers: usize,
    dim: usize,
    n_heads: usize,
    d_ff: usize,
    vocab: usize,
    max_len: usize,
) -> Result<()> {
    if n_layers == 0 || dim == 0 || n_heads == 0 || d_ff == 0 || vocab == 0 || max_len == 0 {
        return Err(Error::Config(format!("{what}: all dimensions must be positive")));
    }
    if dim % n_heads != 0 {
        return Err(Error::Config(format!(
            "{what}: hidden dim {dim} not divisible by {n_heads} heads"
        )));
    }
    Ok(())
}

/// Which compressor the model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompressorSpec {
    /// Decoder only: closed-book or raw-context generation.
    None,
    /// A decoder-architecture compressor reading `<AE> tokens <CTX>*k`.
    Full,
    /// Bidirectional encoder plus a block projection built for one rate.
    Light { encoder: EncoderConfig, rate: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub decoder: DecoderConfig,
    pub compressor: CompressorSpec,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        if let CompressorSpec::Light { encoder, rate } = &self.compressor {
            encoder.validate()?;
            if *rate == 0 {
                return Err(Error::Config("compression rate must be >= 1".into()));
            }
            if encoder.vocab != self.decoder.vocab {
                return Err(Error::Config("encoder and decoder must share a vocabulary".into()));
            }
        }
        Ok(())
    }
}
