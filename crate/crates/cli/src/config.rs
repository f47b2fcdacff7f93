use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ctxcomp_core::compression::{CompressionConfig, CompressorKind};
use ctxcomp_core::inference::PromptTemplate;
use ctxcomp_core::model::DecoderConfig;
use ctxcomp_core::pipeline::WorldConfig;
use ctxcomp_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Decoder shape; the vocabulary comes from the trained tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelShape {
    pub n_layers: usize,
    pub dim: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let d = DecoderConfig::desk(0, 512);
        Self {
            n_layers: d.n_layers,
            dim: d.dim,
            n_heads: d.n_heads,
            d_ff: d.d_ff,
            max_len: d.max_len,
        }
    }
}

impl ModelShape {
    pub fn decoder(&self, vocab: usize) -> DecoderConfig {
        DecoderConfig {
            n_layers: self.n_layers,
            dim: self.dim,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab,
            max_len: self.max_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub rates: Vec<usize>,
    pub questions: usize,
    pub repetitions: usize,
    pub new_tokens: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            rates: vec![4, 16, 128],
            questions: 50,
            repetitions: 3,
            new_tokens: 16,
        }
    }
}

/// Everything a run needs. Nested `seed` fields are overwritten by the
/// top-level `seed` so that one value drives all randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub world: WorldConfig,
    pub model: ModelShape,
    pub compression: CompressionConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub template: PromptTemplate,
    pub top_k: usize,
    /// Held-out questions, taken from the end of the QA file.
    pub eval_questions: usize,
    /// Refuse an index built by a different checkpoint.
    pub strict_fingerprint: bool,
    pub profile: ProfileConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            threads: None,
            world: WorldConfig::default(),
            model: ModelShape::default(),
            compression: CompressionConfig {
                rate: 4,
                kind: CompressorKind::Full,
            },
            // Small batches at a high rate: reconstruction is learned late and
            // needs many updates.
            pretrain: TrainConfig {
                lr: 3e-3,
                batch_size: 4,
                epochs: 10,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                lr: 1e-3,
                batch_size: 16,
                epochs: 10,
                ..TrainConfig::default()
            },
            template: PromptTemplate::default(),
            top_k: 5,
            eval_questions: 100,
            strict_fingerprint: true,
            profile: ProfileConfig::default(),
        }
    }
}

/// Flag values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub xi: Option<usize>,
    pub compressor: Option<CompressorKind>,
    pub top_k: Option<usize>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut cfg: RunConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        if let Some(p) = &o.out {
            cfg.out = p.clone();
        }
        if let Some(x) = o.xi {
            cfg.compression.rate = x;
        }
        if let Some(k) = o.compressor {
            cfg.compression.kind = k;
        }
        if let Some(k) = o.top_k {
            cfg.top_k = k;
        }
        if o.threads.is_some() {
            cfg.threads = o.threads;
        }
        cfg.world.seed = cfg.seed;
        cfg.pretrain.seed = cfg.seed;
        cfg.finetune.seed = cfg.seed;
        CompressionConfig::new(cfg.compression.rate, cfg.compression.kind)?;
        cfg.pretrain.validate()?;
        cfg.finetune.validate()?;
        Ok(cfg)
    }

    /// Writes the resolved config next to the command's outputs.
    pub fn write_resolved(&self, command: &str) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(format!("{command}.config.json"));
        std::fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}
