use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compression::CompressionConfig;
use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::float::Float;
use crate::model::params::Group;
use crate::model::Model;

use super::objectives::{
    ft_loss, pretrain_loss, sample_split, sample_task, ContextMode, FinetuneSample, PretrainSample, Task,
};
use super::optim::{lr_at, AdamW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub freeze_decoder: bool,
    pub freeze_compressor: bool,
    /// Probability of drawing the auto-encoding task in pre-training.
    pub p_ae: f64,
    pub top_k: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Optional cap on optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 8,
            epochs: 1,
            warmup_ratio: 0.05,
            weight_decay: 0.1,
            seed: 0,
            freeze_decoder: false,
            freeze_compressor: false,
            p_ae: 0.5,
            top_k: 5,
            grad_clip: 1.0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_ae) {
            return Err(Error::Config(format!("p_ae {} outside [0, 1]", self.p_ae)));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config("warmup_ratio outside [0, 1]".into()));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("batch_size and lr must be positive".into()));
        }
        Ok(())
    }
}

/// What to train on.
#[derive(Debug, Clone, Copy)]
pub enum TrainData<'a> {
    /// Chunk token sequences; each draw picks AE or LMCE.
    Pretrain {
        chunks: &'a [Vec<TokenId>],
        compression: CompressionConfig,
    },
    Finetune {
        samples: &'a [FinetuneSample],
        mode: ContextMode,
    },
}

impl TrainData<'_> {
    fn len(&self) -> usize {
        match self {
            Self::Pretrain { chunks, .. } => chunks.len(),
            Self::Finetune { samples, .. } => samples.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub task: Task,
    pub loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutcome {
    pub curve: Vec<LossRecord>,
    pub steps: usize,
    pub skipped: usize,
}

impl TrainOutcome {
    /// Mean loss over the first or last `n` steps (all tasks pooled).
    pub fn mean_loss(&self, first: bool, n: usize) -> f64 {
        let steps: Vec<usize> = {
            let mut s: Vec<usize> = self.curve.iter().map(|r| r.step).collect();
            s.dedup();
            s
        };
        let pick: Vec<usize> = if first {
            steps.iter().take(n).copied().collect()
        } else {
            steps.iter().rev().take(n).copied().collect()
        };
        let vals: Vec<f64> = self
            .curve
            .iter()
            .filter(|r| pick.contains(&r.step))
            .map(|r| r.loss)
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }
}

pub fn write_curve(path: &Path, curve: &[LossRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "step,task,loss")?;
    for r in curve {
        writeln!(w, "{},{},{}", r.step, r.task.label(), r.loss)?;
    }
    w.flush()?;
    Ok(())
}

enum Job<'a> {
    Pre(PretrainSample),
    Ft(&'a FinetuneSample),
}

/// Optimizes `model` in place. Per-sample gradients are computed in
/// parallel and summed in batch order, so the trajectory depends only on
/// the seed, not on the thread count.
pub fn train_run<T: Float>(model: &mut Model<T>, data: TrainData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let TrainData::Pretrain { compression, .. } = &data {
        compression.check(model)?;
    }
    if let TrainData::Finetune {
        mode: ContextMode::Compressed(c),
        ..
    } = &data
    {
        c.check(model)?;
    }
    model.store.set_trainable(Group::Decoder, !cfg.freeze_decoder);
    model.store.set_trainable(Group::Compressor, !cfg.freeze_compressor);

    let n = data.len();
    if n == 0 {
        return Err(Error::Config("no training data".into()));
    }
    let per_epoch = n.div_ceil(cfg.batch_size);
    let mut total = per_epoch * cfg.epochs;
    if let Some(m) = cfg.max_steps {
        total = total.min(m);
    }
    let warmup = (cfg.warmup_ratio * total as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(model.store.len(), cfg.weight_decay);
    let mut out = TrainOutcome::default();
    let mut order: Vec<usize> = (0..n).collect();

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            if out.steps >= total {
                break 'epochs;
            }
            let jobs: Vec<Job> = batch
                .iter()
                .map(|&i| match &data {
                    TrainData::Pretrain { chunks, .. } => {
                        let toks = chunks[i].clone();
                        let task = sample_task(&mut rng, cfg.p_ae);
                        let split = if task == Task::Lmce { sample_split(&mut rng, toks.len()) } else { None };
                        Job::Pre(match split {
                            Some(j) => PretrainSample {
                                task: Task::Lmce,
                                tokens: toks,
                                split: Some(j),
                            },
                            None => PretrainSample::ae(toks),
                        })
                    }
                    TrainData::Finetune { samples, .. } => Job::Ft(&samples[i]),
                })
                .collect();

            let model_ref: &Model<T> = model;
            let results: Vec<Result<Option<(Task, T, Vec<T>)>>> = jobs
                .par_iter()
                .map(|job| {
                    let mut g = vec![T::zero(); model_ref.store.len()];
                    let (task, res) = match (job, &data) {
                        (Job::Pre(s), TrainData::Pretrain { compression, .. }) => {
                            (s.task, pretrain_loss(model_ref, s, compression, Some(&mut g)))
                        }
                        (Job::Ft(s), TrainData::Finetune { mode, .. }) => {
                            (Task::Finetune, ft_loss(model_ref, s, mode, cfg.top_k, Some(&mut g)))
                        }
                        _ => unreachable!("job kind follows data kind"),
                    };
                    match res {
                        Ok(l) => Ok(Some((task, l, g))),
                        Err(Error::LengthOverflow { len, max }) => {
                            log::warn!("skipping sample: input of {len} exceeds {max}");
                            Ok(None)
                        }
                        Err(e) => Err(e),
                    }
                })
                .collect();

            let mut acc = vec![T::zero(); model.store.len()];
            let mut per_task: Vec<(Task, f64, usize)> = Vec::new();
            let mut used = 0usize;
            for r in results {
                let Some((task, loss, g)) = r? else {
                    out.skipped += 1;
                    continue;
                };
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step: out.steps,
                        detail: format!("{} loss in epoch {epoch}", task.label()),
                    });
                }
                for (a, b) in acc.iter_mut().zip(&g) {
                    *a += *b;
                }
                match per_task.iter_mut().find(|(t, _, _)| *t == task) {
                    Some(e) => {
                        e.1 += loss.as_f64();
                        e.2 += 1;
                    }
                    None => per_task.push((task, loss.as_f64(), 1)),
                }
                used += 1;
            }
            if used == 0 {
                continue;
            }
            let scale = T::one() / T::of(used as f64);
            for a in acc.iter_mut() {
                *a *= scale;
            }
            if cfg.grad_clip > 0.0 {
                let norm = acc.iter().map(|&g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
                if !norm.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step: out.steps,
                        detail: "non-finite gradient norm".into(),
                    });
                }
                if norm > cfg.grad_clip {
                    let s = T::of(cfg.grad_clip / norm);
                    for a in acc.iter_mut() {
                        *a *= s;
                    }
                }
            }
            let lr = lr_at(out.steps, total, warmup, cfg.lr);
            opt.step(&mut model.store, &acc, lr);
            per_task.sort_by_key(|(t, _, _)| t.label());
            for (task, sum, count) in per_task {
                out.curve.push(LossRecord {
                    step: out.steps,
                    task,
                    loss: sum / count as f64,
                });
            }
            if out.steps % 100 == 0 {
                log::info!("step {}/{total} loss {:.4}", out.steps, out.mean_loss(false, 1));
            }
            out.steps += 1;
        }
    }
    Ok(out)
}
