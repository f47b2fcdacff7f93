use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{generate_tokens, RagSystem};

use super::flops::{decode_step_flops, prefill_flops, FlopModelConfig};

/// One system under measurement; `rate` is `None` for uncompressed input.
#[derive(Debug, Clone)]
pub struct ProfileSystem<'a> {
    pub label: String,
    pub rate: Option<usize>,
    pub system: RagSystem<'a>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub label: String,
    pub rate: Option<usize>,
    /// Mean prompt length over the question set.
    pub prompt_items: f64,
    /// Mean analytic prefill cost per question.
    pub prefill_flops: f64,
    /// Mean analytic cost of one decode step.
    pub decode_flops_per_token: f64,
    /// Median over measured repetitions of the batch's summed prefill time.
    pub prefill_ms: f64,
    pub decode_ms: f64,
    /// Median end-to-end batch time, retrieval and prompt assembly included.
    pub total_ms: f64,
    pub speedup_vs_baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub questions: usize,
    pub repetitions: usize,
    pub new_tokens: usize,
    pub rows: Vec<ProfileRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Times every system on the same questions, generating exactly
/// `new_tokens` tokens per question so decode work is comparable. The first
/// repetition warms caches and is discarded; speedups are against
/// `systems[0]`. Runs sequentially.
pub fn profile_run(
    questions: &[String],
    systems: &[ProfileSystem<'_>],
    repetitions: usize,
    new_tokens: usize,
) -> Result<ProfileReport> {
    if repetitions < 2 {
        return Err(Error::Config("profiling needs at least 2 repetitions".into()));
    }
    if systems.is_empty() || questions.is_empty() {
        return Err(Error::Config("nothing to profile".into()));
    }
    let mut rows = Vec::with_capacity(systems.len());
    for s in systems {
        let mut template = s.system.template.clone();
        template.max_new_tokens = new_tokens;
        template.stop_at_eos = false;
        let sys = RagSystem {
            template,
            ..s.system.clone()
        };
        let flop_cfg = FlopModelConfig::from(&sys.model.spec().decoder);
        let (mut pre, mut dec, mut tot) = (Vec::new(), Vec::new(), Vec::new());
        let (mut items_sum, mut pf_sum, mut df_sum, mut df_n) = (0.0, 0.0, 0.0, 0usize);
        for rep in 0..repetitions {
            let (mut p_ms, mut d_ms) = (0.0, 0.0);
            let start = Instant::now();
            for q in questions {
                let (items, _) = sys.prompt(q)?;
                let (toks, _, timing) = generate_tokens(sys.model, &items, new_tokens, false)?;
                p_ms += timing.prefill_ms;
                d_ms += timing.decode_ms;
                if rep == 0 {
                    let len = items.len() as u64;
                    items_sum += len as f64;
                    pf_sum += prefill_flops(len, &flop_cfg) as f64;
                    // Every generated token after the first costs one step.
                    for i in 1..toks.len() as u64 {
                        df_sum += decode_step_flops(len + i, &flop_cfg) as f64;
                        df_n += 1;
                    }
                }
            }
            let t = start.elapsed().as_secs_f64() * 1e3;
            if rep > 0 {
                pre.push(p_ms);
                dec.push(d_ms);
                tot.push(t);
            }
        }
        let n = questions.len() as f64;
        rows.push(ProfileRow {
            label: s.label.clone(),
            rate: s.rate,
            prompt_items: items_sum / n,
            prefill_flops: pf_sum / n,
            decode_flops_per_token: if df_n > 0 { df_sum / df_n as f64 } else { 0.0 },
            prefill_ms: median(pre),
            decode_ms: median(dec),
            total_ms: median(tot),
            speedup_vs_baseline: 0.0,
        });
    }
    let base = rows[0].total_ms;
    for r in &mut rows {
        r.speedup_vs_baseline = base / r.total_ms;
    }
    Ok(ProfileReport {
        questions: questions.len(),
        repetitions,
        new_tokens,
        rows,
    })
}

impl ProfileReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(
            w,
            "label,rate,prompt_items,prefill_flops,decode_flops_per_token,prefill_ms,decode_ms,speedup_vs_baseline"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{:.2},{:.0},{:.0},{:.3},{:.3},{:.3}",
                r.label,
                r.rate.map_or_else(|| "none".to_string(), |x| x.to_string()),
                r.prompt_items,
                r.prefill_flops,
                r.decode_flops_per_token,
                r.prefill_ms,
                r.decode_ms,
                r.speedup_vs_baseline
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
