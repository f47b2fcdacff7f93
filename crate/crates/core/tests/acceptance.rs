//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Criteria can be selected by number:
//! `cargo test --test acceptance -- 5 6`.
//!
//! The training experiments share one synthetic world (2,000 entities,
//! 64-token chunks, vocabulary 4096) and one set of pre-trained models.
//! Set `CTXCOMP_ACCEPT_CACHE=<dir>` to keep trained checkpoints between runs.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use ctxcomp_core::compression::{assemble_multi, embed_count, flattened_len, CompressionConfig, CompressorKind, ContextEmbeddings};
use ctxcomp_core::corpus::{Chunk, TokenId};
use ctxcomp_core::evalprof::{
    exact_match, match_metric, prefill_flops, profile_run, rouge_l, ExampleMetrics, FlopModelConfig, MetricReport,
    ProfileSystem,
};
use ctxcomp_core::index_store::{compress_chunks, load_index, CompressedIndex};
use ctxcomp_core::inference::{ContextSource, PromptTemplate, RagSystem};
use ctxcomp_core::model::{checkpoint, init_params, CompressorSpec, DecoderConfig, Item, Model, ModelSpec};
use ctxcomp_core::pipeline::{evaluate, model_spec, reconstruction_rouge, split_qa, World, WorldConfig};
use ctxcomp_core::retrieval::{Bm25Index, Bm25Params};
use ctxcomp_core::training::{
    ae_loss, assemble_ft, assemble_lmce, ft_loss, lmce_loss, next_token_loss, train_run, ContextMode, ContextRef,
    FinetuneSample, PretrainSample, TrainConfig, TrainData,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Shared experiment settings.
const KIND: CompressorKind = CompressorKind::Light;
const AE_RATES: [usize; 3] = [4, 16, 64];
const PRETRAIN_STEPS: usize = 15_000;
const PRETRAIN_BATCH: usize = 4;
const PRETRAIN_LR: f64 = 3e-3;
const P_AE: f64 = 1.0;
const N_QUESTIONS: usize = 4000;
const N_EVAL: usize = 100;
const FT_TOP_K: usize = 1;
const FT_EPOCHS: usize = 3;
const FT_BATCH: usize = 8;
const FT_LR: f64 = 1e-3;
const ROUGE_CHUNKS: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Lazily built world and models shared by the training criteria.
struct Lab {
    world: Option<World>,
    pretrained: BTreeMap<usize, Model<f32>>,
    finetuned: BTreeMap<String, Model<f32>>,
    evaluated: Vec<ExampleMetrics>,
    cache: Option<PathBuf>,
}

impl Lab {
    fn new() -> Self {
        let cache = std::env::var_os("CTXCOMP_ACCEPT_CACHE").map(PathBuf::from);
        if let Some(c) = &cache {
            std::fs::create_dir_all(c).unwrap();
        }
        Self {
            world: None,
            pretrained: BTreeMap::new(),
            finetuned: BTreeMap::new(),
            evaluated: Vec::new(),
            cache,
        }
    }

    fn world(&mut self) -> &World {
        self.world.get_or_insert_with(|| {
            World::synthetic(&WorldConfig {
                n_entities: 2000,
                n_questions: N_QUESTIONS,
                vocab_size: 4096,
                chunk_size: 64,
                seed: 0,
            })
            .unwrap()
        })
    }

    fn cached(&self, name: &str, build: impl FnOnce() -> Model<f32>) -> Model<f32> {
        let path = self.cache.as_ref().map(|c| c.join(format!("{name}.ckpt")));
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            return checkpoint::load(p).unwrap();
        }
        let m = build();
        if let Some(p) = path {
            checkpoint::save(&m, &p).unwrap();
        }
        m
    }

    fn pretrained(&mut self, rate: usize) -> &Model<f32> {
        if !self.pretrained.contains_key(&rate) {
            let world = self.world().clone();
            let m = self.cached(&format!("pretrain_{rate}"), || {
                let t = Instant::now();
                let spec = model_spec(DecoderConfig::desk(world.tok.vocab_size(), 512), Some(KIND), rate);
                let mut m = Model::<f32>::init(spec, 0).unwrap();
                let chunks = world.chunk_tokens();
                let cfg = TrainConfig {
                    lr: PRETRAIN_LR,
                    batch_size: PRETRAIN_BATCH,
                    epochs: PRETRAIN_STEPS,
                    max_steps: Some(PRETRAIN_STEPS),
                    warmup_ratio: 0.02,
                    p_ae: P_AE,
                    seed: 0,
                    ..Default::default()
                };
                let compression = CompressionConfig::new(rate, KIND).unwrap();
                let out = train_run(&mut m, TrainData::Pretrain { chunks: &chunks, compression }, &cfg).unwrap();
                println!(
                    "    pretrain rate {rate}: loss {:.3} -> {:.3} in {:.0}s",
                    out.mean_loss(true, 20),
                    out.mean_loss(false, 50),
                    t.elapsed().as_secs_f64()
                );
                m
            });
            self.pretrained.insert(rate, m);
        }
        &self.pretrained[&rate]
    }

    fn rouge_sample(&mut self) -> Vec<Chunk> {
        let w = self.world();
        let step = w.chunks.len() / ROUGE_CHUNKS;
        w.chunks.chunks().iter().step_by(step).take(ROUGE_CHUNKS).cloned().collect()
    }

    /// Fine-tunes from the rate-`init` pre-trained model.
    fn finetuned(&mut self, name: &str, init: usize, mode: ContextMode, top_k: usize, freeze_decoder: bool) -> &Model<f32> {
        if !self.finetuned.contains_key(name) {
            let base = self.pretrained(init).clone();
            let world = self.world().clone();
            let m = self.cached(&format!("finetune_{name}"), || {
                let t = Instant::now();
                let (train, _) = split_qa(&world.qa, N_EVAL);
                let samples = world.finetune_samples(&train, &PromptTemplate::default(), top_k).unwrap();
                let mut m = base;
                let cfg = TrainConfig {
                    lr: FT_LR,
                    batch_size: FT_BATCH,
                    epochs: FT_EPOCHS,
                    warmup_ratio: 0.05,
                    top_k,
                    freeze_decoder,
                    seed: 0,
                    ..Default::default()
                };
                let out = train_run(&mut m, TrainData::Finetune { samples: &samples, mode }, &cfg).unwrap();
                println!(
                    "    finetune {name}: loss {:.3} -> {:.3} in {:.0}s",
                    out.mean_loss(true, 5),
                    out.mean_loss(false, 20),
                    t.elapsed().as_secs_f64()
                );
                m
            });
            self.finetuned.insert(name.to_string(), m);
        }
        &self.finetuned[name]
    }

    /// Held-out EM of a fine-tuned model.
    fn eval(&mut self, name: &str, source_rate: Option<usize>, top_k: usize) -> f64 {
        let world = self.world().clone();
        let model = &self.finetuned[name];
        let source = match source_rate {
            Some(r) => ContextSource::Live(CompressionConfig::new(r, KIND).unwrap()),
            None => ContextSource::Raw,
        };
        let system = RagSystem {
            model,
            tok: &world.tok,
            bm25: &world.bm25,
            chunks: &world.chunks,
            source,
            top_k,
            template: PromptTemplate {
                max_new_tokens: 16,
                ..Default::default()
            },
        };
        let (_, held_out) = split_qa(&world.qa, N_EVAL);
        let (report, _): (MetricReport, _) = evaluate(&system, &held_out, name).unwrap();
        self.evaluated.extend(report.examples.iter().cloned());
        report.em
    }
}

// ---------------------------------------------------------------------------

fn small_decoder(n_layers: usize, dim: usize, vocab: usize, max_len: usize) -> DecoderConfig {
    DecoderConfig {
        n_layers,
        dim,
        n_heads: 2,
        d_ff: 4 * dim,
        vocab,
        max_len,
    }
}

fn tokens(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<TokenId> {
    (0..n).map(|_| rng.random_range(16..vocab as TokenId)).collect()
}

fn c1_injection(_: &mut Lab) -> Outcome {
    let m: Model<f32> = init_params(
        ModelSpec {
            decoder: DecoderConfig::desk(512, 128),
            compressor: CompressorSpec::None,
        },
        1,
    )
    .unwrap();
    let emb = m.store.get("dec.tok_emb").unwrap().to_vec();
    let d = m.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut identical = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..64);
        let toks = tokens(&mut rng, n, 512);
        let a: Vec<Item<f32>> = toks.iter().map(|&t| Item::Token(t)).collect();
        let b: Vec<Item<f32>> = toks
            .iter()
            .map(|&t| Item::Vector(emb[t as usize * d..(t as usize + 1) * d].to_vec()))
            .collect();
        let la: Vec<u32> = m.decoder_forward(&a).unwrap().iter().map(|v| v.to_bits()).collect();
        let lb: Vec<u32> = m.decoder_forward(&b).unwrap().iter().map(|v| v.to_bits()).collect();
        identical += (la == lb) as usize;
    }
    outcome(identical == 100, format!("{identical}/100 sequences bitwise identical"))
}

fn c2_gradients(_: &mut Lab) -> Outcome {
    const H: f64 = 1e-5;
    let spec = |compressor| ModelSpec {
        decoder: small_decoder(2, 8, 32, 40),
        compressor,
    };
    let perturbed = |s: ModelSpec, seed: u64| {
        let mut m = Model::<f64>::init(s, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for v in m.store.data.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        m
    };
    let worst = |mut m: Model<f64>, f: &dyn Fn(&Model<f64>, Option<&mut [f64]>) -> f64| {
        let mut g = vec![0.0; m.store.len()];
        f(&m, Some(&mut g));
        let mut worst: f64 = 0.0;
        for i in 0..m.store.len() {
            let orig = m.store.data[i];
            m.store.data[i] = orig + H;
            let up = f(&m, None);
            m.store.data[i] = orig - H;
            let down = f(&m, None);
            m.store.data[i] = orig;
            let fd = (up - down) / (2.0 * H);
            worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6));
        }
        worst
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cc = CompressionConfig::new(2, CompressorKind::Full).unwrap();
    let ae = PretrainSample::ae(tokens(&mut rng, 8, 32));
    let lm = PretrainSample::lmce(tokens(&mut rng, 10, 32), 4).unwrap();
    let ft = FinetuneSample {
        id: "s".into(),
        question: "q".into(),
        instruction: tokens(&mut rng, 4, 32),
        contexts: (0..2)
            .map(|i| ContextRef {
                id: format!("c{i}"),
                tokens: tokens(&mut rng, 5 + i, 32),
            })
            .collect(),
        response: tokens(&mut rng, 3, 32),
    };
    let mode = ContextMode::Compressed(cc);
    let errs = [
        ("AE", worst(perturbed(spec(CompressorSpec::Full), 2), &|m, g| ae_loss(m, &ae, &cc, g).unwrap())),
        ("LMCE", worst(perturbed(spec(CompressorSpec::Full), 3), &|m, g| lmce_loss(m, &lm, &cc, g).unwrap())),
        ("FT", worst(perturbed(spec(CompressorSpec::Full), 4), &|m, g| ft_loss(m, &ft, &mode, 2, g).unwrap())),
    ];
    let max = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    outcome(max <= 1e-4, format!("max relative error: {detail}"))
}

fn c3_masking(_: &mut Lab) -> Outcome {
    let v = 200;
    let m: Model<f32> = init_params(
        ModelSpec {
            decoder: small_decoder(2, 32, v, 128),
            compressor: CompressorSpec::Full,
        },
        3,
    )
    .unwrap();
    let cc = CompressionConfig::new(4, CompressorKind::Full).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    let mut checked = 0;
    let mut check = |items: &[Item<f32>], targets: &[TokenId], mask: &[bool]| {
        let logits = m.decoder_forward(items).unwrap();
        let (_, g) = next_token_loss(&logits, v, targets, mask).unwrap();
        for (t, &sup) in mask.iter().enumerate() {
            if !sup {
                checked += 1;
                bad += g[t * v..(t + 1) * v].iter().any(|&x| x != 0.0) as usize;
            }
        }
    };
    for _ in 0..50 {
        let n = rng.random_range(8..48);
        let toks = tokens(&mut rng, n, v);
        let j = rng.random_range(n / 4..=3 * n / 4).max(1);
        let a = assemble_lmce(&m, &PretrainSample::lmce(toks, j).unwrap(), &cc).unwrap();
        check(&a.items, &a.targets, &a.mask);
        let sample = FinetuneSample {
            id: "x".into(),
            question: "q".into(),
            instruction: tokens(&mut rng, 6, v),
            contexts: (0..3)
                .map(|i| ContextRef {
                    id: format!("c{i}"),
                    tokens: tokens(&mut rng, 9, v),
                })
                .collect(),
            response: tokens(&mut rng, 4, v),
        };
        for mode in [ContextMode::Compressed(cc), ContextMode::Raw, ContextMode::ClosedBook] {
            let a = assemble_ft(&m, &sample, &mode, 3).unwrap();
            check(&a.items, &a.targets, &a.mask);
        }
    }
    outcome(bad == 0, format!("{bad} non-zero rows among {checked} unsupervised positions"))
}

fn c4_counts(_: &mut Lab) -> Outcome {
    let mut mismatches = 0;
    for rate in 1..=512 {
        for n in 1..=512 {
            // Brute force: walk the tokens, closing a group every `rate`.
            let mut groups = 0;
            let mut filled = 0;
            for _ in 0..n {
                filled += 1;
                if filled == rate {
                    groups += 1;
                    filled = 0;
                }
            }
            mismatches += (embed_count(n, rate) != groups.max(1)) as usize;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut flat_bad = 0;
    for _ in 0..1000 {
        let m = rng.random_range(1..8);
        let rate = rng.random_range(1..40);
        let d = 4;
        let contexts: Vec<ContextEmbeddings<f32>> = (0..m)
            .map(|i| {
                let k = embed_count(rng.random_range(1..200), rate);
                ContextEmbeddings::new(format!("c{i}"), k, d, vec![0.5; k * d]).unwrap()
            })
            .collect();
        let counts: Vec<usize> = contexts.iter().map(|c| c.k).collect();
        let expect = counts.iter().sum::<usize>() + m - 1;
        let got = assemble_multi(contexts).unwrap().len();
        flat_bad += (got != expect || flattened_len(&counts) != expect) as usize;
    }
    outcome(
        mismatches == 0 && flat_bad == 0,
        format!("{mismatches} count mismatches over 262144 (n, rate); {flat_bad}/1000 flattened-length mismatches"),
    )
}

fn c5_ae_trend(lab: &mut Lab) -> Outcome {
    let sample = lab.rouge_sample();
    let mut scores = Vec::new();
    for rate in AE_RATES {
        let tok = lab.world().tok.clone();
        let m = lab.pretrained(rate);
        let cfg = CompressionConfig::new(rate, KIND).unwrap();
        scores.push(reconstruction_rouge(m, &cfg, &sample, &tok).unwrap());
    }
    let monotone = scores.windows(2).all(|w| w[1] <= w[0] + 0.02);
    let detail = AE_RATES
        .iter()
        .zip(&scores)
        .map(|(r, s)| format!("xi={r} {s:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(scores[0] >= 0.90 && monotone, format!("ROUGE-L {detail}"))
}

fn compressed(rate: usize) -> ContextMode {
    ContextMode::Compressed(CompressionConfig::new(rate, KIND).unwrap())
}

fn c6_ordering(lab: &mut Lab) -> Outcome {
    let k = FT_TOP_K;
    lab.finetuned("raw", 4, ContextMode::Raw, k, false);
    lab.finetuned("xi4", 4, compressed(4), k, false);
    lab.finetuned("xi64", 64, compressed(64), k, false);
    lab.finetuned("closed", 4, ContextMode::ClosedBook, 0, false);
    let raw = lab.eval("raw", None, k);
    let x4 = lab.eval("xi4", Some(4), k);
    let x64 = lab.eval("xi64", Some(64), k);
    let closed = lab.eval("closed", None, 0);
    let s = 0.05;
    let pass = raw >= x4 - s && x4 >= x64 - s && x64 >= closed - s && x4 >= closed + 0.10;
    outcome(
        pass,
        format!("EM raw {raw:.3}, xi=4 {x4:.3}, xi=64 {x64:.3}, closed book {closed:.3}"),
    )
}

fn c7_freeze(lab: &mut Lab) -> Outcome {
    let k = FT_TOP_K;
    let before: Vec<u32> = decoder_bits(lab.pretrained(4));
    lab.finetuned("xi4_frozen", 4, compressed(4), k, true);
    let after = decoder_bits(&lab.finetuned["xi4_frozen"]);
    let unchanged = before == after;
    lab.finetuned("xi4", 4, compressed(4), k, false);
    let frozen = lab.eval("xi4_frozen", Some(4), k);
    let full = lab.eval("xi4", Some(4), k);
    outcome(
        unchanged && frozen <= full + 0.02,
        format!("decoder bitwise unchanged: {unchanged}; EM frozen {frozen:.3} vs tuned {full:.3}"),
    )
}

fn decoder_bits(m: &Model<f32>) -> Vec<u32> {
    m.store
        .specs()
        .iter()
        .filter(|s| s.name.starts_with("dec."))
        .flat_map(|s| m.store.data[s.range()].iter().map(|v| v.to_bits()))
        .collect()
}

fn c8_multi_context(lab: &mut Lab) -> Outcome {
    let name = |k: usize| if k == FT_TOP_K { "xi4".to_string() } else { format!("xi4_top{k}") };
    let mut em = Vec::new();
    for k in [1, 5] {
        let n = name(k);
        lab.finetuned(&n, 4, compressed(4), k, false);
        em.push(lab.eval(&n, Some(4), k));
    }
    outcome(em[1] >= em[0] - 0.02, format!("EM top_k=1 {:.3}, top_k=5 {:.3}", em[0], em[1]))
}

fn c9_efficiency(lab: &mut Lab) -> Outcome {
    let world = lab.world().clone();
    let dec = DecoderConfig::desk(world.tok.vocab_size(), 512);
    let model = init_params(model_spec(dec, Some(CompressorKind::Full), 4), 9).unwrap();
    let template = PromptTemplate {
        max_new_tokens: 8,
        ..Default::default()
    };
    let (_, held_out) = split_qa(&world.qa, N_EVAL);
    let questions: Vec<String> = held_out.iter().take(50).map(|q| q.question.clone()).collect();

    // (a) prompt lengths: 1 + sum k_i + (m - 1) + |instruction|.
    let mut len_bad = 0;
    for rate in [4, 16, 128] {
        let cfg = CompressionConfig::new(rate, CompressorKind::Full).unwrap();
        let system = RagSystem {
            model: &model,
            tok: &world.tok,
            bm25: &world.bm25,
            chunks: &world.chunks,
            source: ContextSource::Live(cfg),
            top_k: 5,
            template: template.clone(),
        };
        for q in &questions {
            let (items, ids) = system.prompt(q).unwrap();
            let ks: usize = ids
                .iter()
                .map(|id| embed_count(world.chunks.get(id).unwrap().tokens.len(), rate))
                .sum();
            let expect = 1 + ks + ids.len().saturating_sub(1) + template.instruction_tokens(&world.tok, q).len();
            len_bad += (items.len() != expect) as usize;
        }
    }

    // (b) analytic prefill cost, five 128-token contexts.
    let fc = FlopModelConfig::from(&dec);
    let instr = 12u64;
    let raw_len = 1 + 5 * 128 + 4 + instr;
    let cmp_len = 1 + 5 * embed_count(128, 128) as u64 + 4 + instr;
    let ratio = prefill_flops(raw_len, &fc) as f64 / prefill_flops(cmp_len, &fc) as f64;

    // (c) measured time over the same 50 questions, contexts precomputed.
    let retrieved = ctxcomp_core::pipeline::retrieved_chunks(&world, &questions, 5).unwrap();
    let rates = [4usize, 16, 128];
    let indexes: Vec<CompressedIndex> = rates
        .iter()
        .map(|&r| compress_chunks(&retrieved, &CompressionConfig::new(r, CompressorKind::Full).unwrap(), &model).unwrap())
        .collect();
    let mut systems = vec![ProfileSystem {
        label: "raw".into(),
        rate: None,
        system: RagSystem {
            model: &model,
            tok: &world.tok,
            bm25: &world.bm25,
            chunks: &world.chunks,
            source: ContextSource::Raw,
            top_k: 5,
            template: template.clone(),
        },
    }];
    for (r, idx) in rates.iter().zip(&indexes) {
        systems.push(ProfileSystem {
            label: format!("xi={r}"),
            rate: Some(*r),
            system: RagSystem {
                model: &model,
                tok: &world.tok,
                bm25: &world.bm25,
                chunks: &world.chunks,
                source: ContextSource::Index(idx),
                top_k: 5,
                template: template.clone(),
            },
        });
    }
    let report = profile_run(&questions, &systems, 5, 8).unwrap();
    let times: Vec<f64> = report.rows.iter().map(|r| r.total_ms).collect();
    let decreasing = times.windows(2).all(|w| w[1] < w[0]);
    let speedup = times[0] / times[3];
    outcome(
        len_bad == 0 && ratio >= 10.0 && decreasing && speedup >= 1.5,
        format!(
            "(a) {len_bad} length mismatches; (b) prefill FLOP ratio {ratio:.1}x; (c) ms {} speedup {speedup:.2}x",
            times.iter().map(|t| format!("{t:.0}")).collect::<Vec<_>>().join(" > ")
        ),
    )
}

fn c10_offline_online(lab: &mut Lab) -> Outcome {
    let world = lab.world().clone();
    let dec = DecoderConfig::desk(world.tok.vocab_size(), 512);
    let model = init_params(model_spec(dec, Some(CompressorKind::Full), 4), 10).unwrap();
    let cfg = CompressionConfig::new(4, CompressorKind::Full).unwrap();
    let (_, held_out) = split_qa(&world.qa, N_EVAL);
    let questions: Vec<String> = held_out.iter().map(|q| q.question.clone()).collect();
    let chunks = ctxcomp_core::pipeline::retrieved_chunks(&world, &questions, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.ccix");
    let built = compress_chunks(&chunks, &cfg, &model).unwrap();
    built.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let loaded = load_index(&path).unwrap();
    let roundtrip = loaded.to_bytes().unwrap() == bytes && loaded == built;
    let template = PromptTemplate {
        max_new_tokens: 12,
        ..Default::default()
    };
    let system = |source| RagSystem {
        model: &model,
        tok: &world.tok,
        bm25: &world.bm25,
        chunks: &world.chunks,
        source,
        top_k: 3,
        template: template.clone(),
    };
    let offline = system(ContextSource::Index(&loaded));
    let online = system(ContextSource::Live(cfg));
    let same = questions
        .iter()
        .filter(|q| offline.answer(q).unwrap().answer.tokens == online.answer(q).unwrap().answer.tokens)
        .count();
    outcome(
        roundtrip && same == questions.len(),
        format!("{same}/{} answers token-identical; save/load bitwise: {roundtrip}", questions.len()),
    )
}

fn c11_metrics(lab: &mut Lab) -> Outcome {
    // (prediction, answers, EM, Match, ROUGE-L), computed by hand.
    let table: [(&str, &[&str], f64, f64, f64); 12] = [
        ("Rosalind Bailey", &["Rosalind Bailey"], 1.0, 1.0, 1.0),
        ("Sarah Hadland", &["Rosalind Bailey"], 0.0, 0.0, 0.0),
        ("The Rosalind Bailey.", &["Rosalind Bailey"], 1.0, 1.0, 0.8),
        ("Rosalind Bailey played the role", &["Rosalind Bailey"], 0.0, 1.0, 4.0 / 7.0),
        ("a c d", &["a b c d"], 0.0, 0.0, 6.0 / 7.0),
        ("", &["x"], 0.0, 0.0, 0.0),
        ("Paris", &["London", "paris"], 1.0, 1.0, 1.0),
        ("  PARIS!!  ", &["Paris"], 1.0, 1.0, 1.0),
        ("It is in Paris, France", &["Paris"], 0.0, 1.0, 1.0 / 3.0),
        ("an apple", &["apple"], 1.0, 1.0, 2.0 / 3.0),
        ("blue green", &["green blue"], 0.0, 0.0, 0.5),
        ("Sarah Hadland and Rosalind Bailey", &["Rosalind Bailey", "Sarah Hadland"], 0.0, 1.0, 4.0 / 7.0),
    ];
    let mut wrong = Vec::new();
    for (i, (p, a, em, m, r)) in table.iter().enumerate() {
        let answers: Vec<String> = a.iter().map(|s| s.to_string()).collect();
        let s = ExampleMetrics::score("t", p, &answers);
        let direct = answers.iter().map(|g| rouge_l(p, g)).fold(0.0, f64::max);
        if s.em != *em
            || s.match_ != *m
            || exact_match(p, &answers) != *em
            || match_metric(p, &answers) != *m
            || (s.rouge_l - r).abs() > 1e-12
            || (direct - r).abs() > 1e-12
        {
            wrong.push(i + 1);
        }
    }
    let violations = lab.evaluated.iter().filter(|e| e.em > e.match_).count();
    outcome(
        wrong.is_empty() && violations == 0,
        format!(
            "table mismatches {wrong:?}; EM > Match on {violations} of {} evaluated examples",
            lab.evaluated.len()
        ),
    )
}

fn c12_bm25(_: &mut Lab) -> Outcome {
    let docs = [
        ("d1", "The cat sat on the mat."),
        ("d2", "the dog sat"),
        ("d3", "A cat and a dog played"),
    ];
    let idx = Bm25Index::build(docs.iter().copied(), Bm25Params::default()).unwrap();
    // N = 3, lengths 6/3/6, avgdl 5, k1 = 0.9, b = 0.4.
    let idf = |df: f64| ((3.0 - df + 0.5) / (df + 0.5) + 1.0).ln();
    let term = |tf: f64, dl: f64, df: f64| idf(df) * tf * 1.9 / (tf + 0.9 * (0.6 + 0.4 * dl / 5.0));
    let expect = [
        ("d1", term(1.0, 6.0, 2.0) + term(1.0, 6.0, 2.0)),
        ("d2", term(1.0, 3.0, 2.0)),
        ("d3", term(1.0, 6.0, 2.0)),
    ];
    let got = idx.search("cat sat", 10).unwrap();
    let mut err: f64 = 0.0;
    let mut order_ok = got.len() == 3;
    for ((id, s), (eid, es)) in got.iter().zip(&expect) {
        order_ok &= id == eid;
        err = err.max((s - es).abs());
    }
    // Identical documents tie; the smaller id comes first.
    let tie = Bm25Index::build([("b", "red fox"), ("a", "red fox"), ("c", "blue")].into_iter(), Bm25Params::default())
        .unwrap()
        .search("fox", 5)
        .unwrap();
    let tie_ok = tie.len() == 2 && tie[0].0 == "a" && tie[1].0 == "b" && tie[0].1 == tie[1].1;
    outcome(
        err <= 1e-9 && order_ok && tie_ok,
        format!("max score error {err:.1e}; ranking {order_ok}; tie order {tie_ok}"),
    )
}

type Criterion = (usize, &'static str, fn(&mut Lab) -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "injection equivalence", c1_injection),
        (2, "gradient correctness", c2_gradients),
        (3, "loss masking", c3_masking),
        (4, "compression-count oracle", c4_counts),
        (5, "auto-encoding trend", c5_ae_trend),
        (6, "end-to-end ordering", c6_ordering),
        (7, "freeze-decoder ablation", c7_freeze),
        (8, "multi-context ablation", c8_multi_context),
        (9, "efficiency mechanism", c9_efficiency),
        (10, "offline/online equivalence", c10_offline_online),
        (11, "metric oracles", c11_metrics),
        (12, "BM25 oracle", c12_bm25),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (n, name, _) in &criteria {
            println!("criterion_{n:02}_{}: test", name.replace([' ', '/', '-'], "_"));
        }
        return;
    }
    let selected: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let mut lab = Lab::new();
    let mut failed = 0;
    let start = Instant::now();
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let o = run(&mut lab);
        failed += !o.pass as usize;
        println!(
            "criterion {n:>2} {name:<28} {}  {} [{:.0}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} failed, total {:.0}s", start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
