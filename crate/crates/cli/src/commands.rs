use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ctxcomp_core::compression::{CompressionConfig, CompressorKind};
use ctxcomp_core::corpus::{
    build_tokenizer, chunk_corpus, chunks_from_records, gen_synthetic, jsonl, load_qa, ChunkRecord, ChunkStore,
    Document, QaExample, Tokenizer,
};
use ctxcomp_core::evalprof::{profile_run, MetricReport, ProfileSystem};
use ctxcomp_core::index_store::{build_compressed_index, compress_chunks, load_index, CompressedIndex};
use ctxcomp_core::inference::{ContextSource, RagSystem};
use ctxcomp_core::model::{checkpoint, CompressorSpec, Model};
use ctxcomp_core::pipeline::{evaluate, model_spec, retrieved_chunks, split_qa, World};
use ctxcomp_core::retrieval::{Bm25Index, Bm25Params};
use ctxcomp_core::training::{train_run, write_curve, ContextMode, TrainData, TrainOutcome};
use serde::Serialize;

use crate::config::RunConfig;

/// How fine-tuning and answering see the retrieved chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Compressed,
    Raw,
    ClosedBook,
}

impl Mode {
    fn context_mode(self, cfg: &RunConfig) -> ContextMode {
        match self {
            Mode::Compressed => ContextMode::Compressed(cfg.compression),
            Mode::Raw => ContextMode::Raw,
            Mode::ClosedBook => ContextMode::ClosedBook,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    NoPretrain,
    FreezeDecoder,
    Topk,
    TrainSets,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(v)?).with_context(|| format!("writing {}", path.display()))
}

fn load_tokenizer(cfg: &RunConfig) -> Result<Tokenizer> {
    let p = cfg.path("tokenizer.json");
    let text = fs::read_to_string(&p).with_context(|| format!("reading {} (run `chunk` first)", p.display()))?;
    Ok(Tokenizer::from_json(&text)?)
}

fn load_world(cfg: &RunConfig, qa_files: &[PathBuf]) -> Result<World> {
    let tok = load_tokenizer(cfg)?;
    let records: Vec<ChunkRecord> =
        jsonl::read(&cfg.path("chunks.jsonl")).context("reading chunks.jsonl (run `chunk` first)")?;
    let chunks = ChunkStore::new(chunks_from_records(&records, &tok))?;
    let bm25_dir = cfg.path("bm25");
    let bm25 = if bm25_dir.join("meta.json").exists() {
        Bm25Index::load(&bm25_dir)?
    } else {
        log::info!("no saved BM25 index; building in memory");
        Bm25Index::from_chunks(chunks.chunks(), Bm25Params::default())?
    };
    let mut qa = Vec::new();
    let files: Vec<PathBuf> = if qa_files.is_empty() { vec![cfg.path("qa.jsonl")] } else { qa_files.to_vec() };
    for f in &files {
        if f.exists() {
            qa.extend(load_qa(f, &tok)?.examples);
        } else if !qa_files.is_empty() {
            bail!("QA file {} not found", f.display());
        }
    }
    Ok(World {
        documents: Vec::new(),
        tok,
        chunks,
        bm25,
        qa,
    })
}

fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// The explicit checkpoint, else fine-tuned, else pre-trained.
fn default_checkpoint(cfg: &RunConfig, explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    for name in ["finetune.ckpt", "pretrain.ckpt"] {
        let p = cfg.path(name);
        if p.exists() {
            return Ok(p);
        }
    }
    bail!("no checkpoint in {} (run `pretrain` or `finetune`)", cfg.out.display())
}

fn fresh_model(cfg: &RunConfig, vocab: usize, mode: Mode) -> Result<Model<f32>> {
    let kind = match mode {
        Mode::Compressed => Some(cfg.compression.kind),
        _ => None,
    };
    let spec = model_spec(cfg.model.decoder(vocab), kind, cfg.compression.rate);
    Ok(Model::init(spec, cfg.seed)?)
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let set = gen_synthetic(cfg.world.n_entities, cfg.world.n_questions, cfg.seed);
    jsonl::write(&cfg.path("corpus.jsonl"), &set.documents)?;
    jsonl::write(&cfg.path("qa.jsonl"), &set.questions)?;
    println!(
        "wrote {} documents and {} questions to {}",
        set.documents.len(),
        set.questions.len(),
        cfg.out.display()
    );
    Ok(())
}

pub fn chunk(cfg: &RunConfig, corpus: Option<&Path>) -> Result<()> {
    let corpus = corpus.map(Path::to_path_buf).unwrap_or_else(|| cfg.path("corpus.jsonl"));
    let docs: Vec<Document> = jsonl::read(&corpus)?;
    let tok_path = cfg.path("tokenizer.json");
    let tok = if tok_path.exists() {
        load_tokenizer(cfg)?
    } else {
        let t = build_tokenizer(&docs, cfg.world.vocab_size, cfg.seed)?;
        fs::write(&tok_path, t.to_json()?)?;
        t
    };
    let chunks = chunk_corpus(&docs, &tok, cfg.world.chunk_size);
    let records: Vec<ChunkRecord> = chunks.iter().map(ChunkRecord::from).collect();
    jsonl::write(&cfg.path("chunks.jsonl"), &records)?;
    println!("{} chunks, vocabulary {}", chunks.len(), tok.vocab_size());
    Ok(())
}

pub fn build_bm25(cfg: &RunConfig) -> Result<()> {
    let tok = load_tokenizer(cfg)?;
    let records: Vec<ChunkRecord> = jsonl::read(&cfg.path("chunks.jsonl"))?;
    let chunks = chunks_from_records(&records, &tok);
    let index = Bm25Index::from_chunks(&chunks, Bm25Params::default())?;
    index.save(&cfg.path("bm25"))?;
    println!("indexed {} chunks, avgdl {:.2}", index.len(), index.avgdl());
    Ok(())
}

fn report_training(name: &str, out: &TrainOutcome) {
    println!(
        "{name}: {} steps, {} skipped, loss {:.4} -> {:.4}",
        out.steps,
        out.skipped,
        out.mean_loss(true, 10),
        out.mean_loss(false, 10)
    );
}

pub fn pretrain(cfg: &RunConfig) -> Result<()> {
    let world = load_world(cfg, &[])?;
    let mut model = fresh_model(cfg, world.tok.vocab_size(), Mode::Compressed)?;
    let chunks = world.chunk_tokens();
    let out = train_run(
        &mut model,
        TrainData::Pretrain {
            chunks: &chunks,
            compression: cfg.compression,
        },
        &cfg.pretrain,
    )?;
    checkpoint::save(&model, &cfg.path("pretrain.ckpt"))?;
    write_curve(&cfg.path("pretrain_curve.csv"), &out.curve)?;
    report_training("pretrain", &out);
    Ok(())
}

pub struct FinetuneArgs<'a> {
    pub mode: Mode,
    /// `None`: pre-trained checkpoint when present, else random init.
    pub init: Option<&'a str>,
    pub freeze_decoder: bool,
    pub train_sets: &'a [PathBuf],
}

fn finetuned(cfg: &RunConfig, world: &World, train: &[QaExample], a: &FinetuneArgs<'_>) -> Result<(Model<f32>, TrainOutcome)> {
    let mut model = match a.init {
        Some("none") => fresh_model(cfg, world.tok.vocab_size(), a.mode)?,
        Some(p) => load_checkpoint(Path::new(p))?,
        None if cfg.path("pretrain.ckpt").exists() => load_checkpoint(&cfg.path("pretrain.ckpt"))?,
        None => fresh_model(cfg, world.tok.vocab_size(), a.mode)?,
    };
    if model.vocab() != world.tok.vocab_size() {
        bail!(
            "checkpoint vocabulary {} differs from tokenizer {}",
            model.vocab(),
            world.tok.vocab_size()
        );
    }
    let samples = world.finetune_samples(train, &cfg.template, cfg.top_k)?;
    let mut tc = cfg.finetune.clone();
    tc.top_k = cfg.top_k;
    tc.freeze_decoder |= a.freeze_decoder;
    let out = train_run(
        &mut model,
        TrainData::Finetune {
            samples: &samples,
            mode: a.mode.context_mode(cfg),
        },
        &tc,
    )?;
    Ok((model, out))
}

pub fn finetune(cfg: &RunConfig, a: &FinetuneArgs<'_>) -> Result<()> {
    let world = load_world(cfg, a.train_sets)?;
    let (train, _) = split_qa(&world.qa, cfg.eval_questions);
    let (model, out) = finetuned(cfg, &world, &train, a)?;
    checkpoint::save(&model, &cfg.path("finetune.ckpt"))?;
    write_curve(&cfg.path("finetune_curve.csv"), &out.curve)?;
    report_training("finetune", &out);
    Ok(())
}

pub fn compress(cfg: &RunConfig, ckpt: Option<&Path>) -> Result<()> {
    let world = load_world(cfg, &[])?;
    let model = load_checkpoint(&default_checkpoint(cfg, ckpt)?)?;
    let summary = build_compressed_index(world.chunks.chunks(), &cfg.compression, &model, &cfg.path("index.ccix"))?;
    write_json(&cfg.path("index_summary.json"), &summary)?;
    println!(
        "compressed {} chunks into {} vectors, {} bytes, {:.0} ms",
        summary.count, summary.total_vectors, summary.bytes, summary.wall_ms
    );
    Ok(())
}

/// The saved index if it matches the config and checkpoint, else `None`
/// (live compression).
fn usable_index(cfg: &RunConfig, model: &Model<f32>) -> Result<Option<CompressedIndex>> {
    let p = cfg.path("index.ccix");
    if !p.exists() {
        return Ok(None);
    }
    let index = load_index(&p)?;
    if index.header.config() != cfg.compression {
        log::warn!("index.ccix was built with another compression config; compressing live");
        return Ok(None);
    }
    index.check_model(model, cfg.strict_fingerprint)?;
    Ok(Some(index))
}

fn source<'a>(mode: Mode, cfg: &RunConfig, index: Option<&'a CompressedIndex>) -> ContextSource<'a> {
    match (mode, index) {
        (Mode::Compressed, Some(i)) => ContextSource::Index(i),
        (Mode::Compressed, None) => ContextSource::Live(cfg.compression),
        _ => ContextSource::Raw,
    }
}

fn top_k_for(mode: Mode, cfg: &RunConfig) -> usize {
    if mode == Mode::ClosedBook {
        0
    } else {
        cfg.top_k
    }
}

pub fn generate(cfg: &RunConfig, mode: Mode, question: Option<&str>, ckpt: Option<&Path>) -> Result<()> {
    let world = load_world(cfg, &[])?;
    let model = load_checkpoint(&default_checkpoint(cfg, ckpt)?)?;
    let index = if mode == Mode::Compressed { usable_index(cfg, &model)? } else { None };
    let system = RagSystem {
        model: &model,
        tok: &world.tok,
        bm25: &world.bm25,
        chunks: &world.chunks,
        source: source(mode, cfg, index.as_ref()),
        top_k: top_k_for(mode, cfg),
        template: cfg.template.clone(),
    };
    let questions: Vec<QaExample> = match question {
        Some(q) => vec![QaExample {
            id: "cli".into(),
            question: q.to_string(),
            answers: vec![String::new()],
        }],
        None => split_qa(&world.qa, cfg.eval_questions).1,
    };
    let (_, records) = evaluate(&system, &questions, "generate")?;
    jsonl::write(&cfg.path("generations.jsonl"), &records)?;
    if question.is_some() {
        println!("{}", records[0].answer);
        println!("retrieved: {}", records[0].retrieved.join(", "));
    } else {
        println!("answered {} questions", records.len());
    }
    Ok(())
}

fn eval_model(cfg: &RunConfig, world: &World, model: &Model<f32>, mode: Mode, eval: &[QaExample]) -> Result<MetricReport> {
    let index = if mode == Mode::Compressed && model.spec().compressor != CompressorSpec::None {
        usable_index(cfg, model).ok().flatten()
    } else {
        None
    };
    let system = RagSystem {
        model,
        tok: &world.tok,
        bm25: &world.bm25,
        chunks: &world.chunks,
        source: source(mode, cfg, index.as_ref()),
        top_k: top_k_for(mode, cfg),
        template: cfg.template.clone(),
    };
    Ok(evaluate(&system, eval, "synthetic-heldout")?.0)
}

pub fn eval(cfg: &RunConfig, mode: Mode, ckpt: Option<&Path>) -> Result<()> {
    let world = load_world(cfg, &[])?;
    let model = load_checkpoint(&default_checkpoint(cfg, ckpt)?)?;
    let (_, held) = split_qa(&world.qa, cfg.eval_questions);
    let report = eval_model(cfg, &world, &model, mode, &held)?;
    write_json(&cfg.path("metrics.json"), &report)?;
    println!(
        "{} questions: EM {:.4}  Match {:.4}  ROUGE-L {:.4}",
        report.count, report.em, report.match_, report.rouge_l
    );
    Ok(())
}

pub fn profile(cfg: &RunConfig, ckpt: Option<&Path>) -> Result<()> {
    let world = load_world(cfg, &[])?;
    let model = load_checkpoint(&default_checkpoint(cfg, ckpt)?)?;
    let (_, held) = split_qa(&world.qa, cfg.eval_questions);
    let questions: Vec<String> = held.iter().take(cfg.profile.questions).map(|q| q.question.clone()).collect();
    if questions.is_empty() {
        bail!("no held-out questions to profile");
    }
    let needed = retrieved_chunks(&world, &questions, cfg.top_k)?;
    let rates: Vec<usize> = match model.spec().compressor {
        CompressorSpec::None => bail!("profiling compressed systems needs a checkpoint with a compressor"),
        CompressorSpec::Full => cfg.profile.rates.clone(),
        CompressorSpec::Light { rate, .. } => {
            log::warn!("light compressor is built for rate {rate}; profiling only that rate");
            vec![rate]
        }
    };
    let kind = match model.spec().compressor {
        CompressorSpec::Light { .. } => CompressorKind::Light,
        _ => CompressorKind::Full,
    };
    let indexes: Vec<CompressedIndex> = rates
        .iter()
        .map(|&r| Ok(compress_chunks(&needed, &CompressionConfig::new(r, kind)?, &model)?))
        .collect::<Result<_>>()?;
    let base = RagSystem {
        model: &model,
        tok: &world.tok,
        bm25: &world.bm25,
        chunks: &world.chunks,
        source: ContextSource::Raw,
        top_k: cfg.top_k,
        template: cfg.template.clone(),
    };
    let mut systems = vec![ProfileSystem {
        label: "no-compression".into(),
        rate: None,
        system: base.clone(),
    }];
    for (r, idx) in rates.iter().zip(&indexes) {
        systems.push(ProfileSystem {
            label: format!("xi{r}"),
            rate: Some(*r),
            system: RagSystem {
                source: ContextSource::Index(idx),
                ..base.clone()
            },
        });
    }
    let report = profile_run(&questions, &systems, cfg.profile.repetitions, cfg.profile.new_tokens)?;
    report.write_csv(&cfg.path("profile.csv"))?;
    write_json(&cfg.path("profile.json"), &report)?;
    for r in &report.rows {
        println!(
            "{:<16} items {:>7.1}  prefill GFLOP {:>8.4}  total {:>9.1} ms  speedup {:.2}x",
            r.label,
            r.prompt_items,
            r.prefill_flops / 1e9,
            r.total_ms,
            r.speedup_vs_baseline
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRow {
    label: String,
    em: f64,
    #[serde(rename = "match")]
    match_: f64,
    rouge_l: f64,
    final_loss: f64,
}

pub fn ablate(cfg: &RunConfig, axis: Axis, values: &[usize], train_sets: &[PathBuf], mode: Mode) -> Result<()> {
    let mut world = load_world(cfg, &[])?;
    let (train, held) = split_qa(&world.qa, cfg.eval_questions);
    let mut rows = Vec::new();
    let mut run = |label: String, cfg: &RunConfig, world: &World, train: &[QaExample], a: FinetuneArgs<'_>| -> Result<()> {
        let (model, out) = finetuned(cfg, world, train, &a)?;
        let rep = eval_model(cfg, world, &model, a.mode, &held)?;
        println!("{label:<24} EM {:.4}  Match {:.4}", rep.em, rep.match_);
        rows.push(AblationRow {
            label,
            em: rep.em,
            match_: rep.match_,
            rouge_l: rep.rouge_l,
            final_loss: out.mean_loss(false, 10),
        });
        Ok(())
    };
    let args = |init: Option<&'static str>, freeze: bool| FinetuneArgs {
        mode,
        init,
        freeze_decoder: freeze,
        train_sets: &[],
    };
    match axis {
        Axis::NoPretrain => {
            if !cfg.path("pretrain.ckpt").exists() {
                bail!("the no-pretrain axis compares against pretrain.ckpt; run `pretrain` first");
            }
            run("without-pretraining".into(), cfg, &world, &train, args(Some("none"), false))?;
            run("with-pretraining".into(), cfg, &world, &train, args(None, false))?;
        }
        Axis::FreezeDecoder => {
            run("frozen-decoder".into(), cfg, &world, &train, args(None, true))?;
            run("tuned-decoder".into(), cfg, &world, &train, args(None, false))?;
        }
        Axis::Topk => {
            let values = if values.is_empty() { vec![1, 5] } else { values.to_vec() };
            for k in values {
                let c = RunConfig {
                    top_k: k,
                    ..cfg.clone()
                };
                run(format!("top{k}"), &c, &world, &train, args(None, false))?;
            }
        }
        Axis::TrainSets => {
            if train_sets.is_empty() {
                bail!("--train-sets needs at least one QA file");
            }
            let tok = world.tok.clone();
            let held_ids: std::collections::HashSet<&str> = held.iter().map(|q| q.id.as_str()).collect();
            let mut all = Vec::new();
            for f in train_sets {
                // Held-out questions never train.
                let set: Vec<QaExample> = load_qa(f, &tok)?
                    .examples
                    .into_iter()
                    .filter(|q| !held_ids.contains(q.id.as_str()))
                    .collect();
                all.extend(set.iter().cloned());
                let label = f.file_stem().map_or("set".into(), |s| s.to_string_lossy().into_owned());
                run(format!("single:{label}"), cfg, &world, &set, args(None, false))?;
            }
            world.qa = all.clone();
            run("multi".into(), cfg, &world, &all, args(None, false))?;
        }
    }
    let name = format!("ablate_{}", axis_name(axis));
    write_json(&cfg.path(&format!("{name}.json")), &rows)?;
    let mut csv = String::from("label,em,match,rouge_l,final_loss\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{}\n", r.label, r.em, r.match_, r.rouge_l, r.final_loss));
    }
    fs::write(cfg.path(&format!("{name}.csv")), csv)?;
    Ok(())
}

fn axis_name(a: Axis) -> &'static str {
    match a {
        Axis::NoPretrain => "no-pretrain",
        Axis::FreezeDecoder => "freeze-decoder",
        Axis::Topk => "topk",
        Axis::TrainSets => "train-sets",
    }
}
