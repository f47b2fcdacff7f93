//! `ctxcomp`: synthetic corpus → chunks → BM25 → pre-training →
//! fine-tuning → compressed index → generation, evaluation, profiling and
//! ablations. Artifacts live in the `--out` directory.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctxcomp_core::compression::CompressorKind;

use commands::{Axis, FinetuneArgs, Mode};
use config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "ctxcomp", version, about = "Compressed-context retrieval-augmented generation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding all artifacts of the run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Compression rate: context tokens per embedding.
    #[arg(long, global = true)]
    xi: Option<usize>,
    /// Compressor variant.
    #[arg(long, global = true, value_parser = parse_kind)]
    compressor: Option<CompressorKind>,
    /// Retrieved chunks per question; 0 answers closed book.
    #[arg(long, global = true)]
    topk: Option<usize>,
    /// Worker threads; 1 is fully sequential.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

fn parse_kind(s: &str) -> Result<CompressorKind, String> {
    s.parse().map_err(|e: ctxcomp_core::Error| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic fact corpus and its QA pairs.
    Synth,
    /// Train (or reuse) the tokenizer and split documents into chunks.
    Chunk {
        /// Corpus JSONL of {"id", "text"}; defaults to <out>/corpus.jsonl.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Build and save the BM25 index over the chunks.
    #[command(name = "build-bm25")]
    BuildBm25,
    /// Pre-train decoder and compressor on auto-encoding and continuation.
    Pretrain,
    /// Instruction-tune on QA with retrieved contexts.
    Finetune {
        #[arg(long, value_enum, default_value_t = Mode::Compressed)]
        mode: Mode,
        /// Starting checkpoint, or `none` for random init. Defaults to
        /// <out>/pretrain.ckpt when present.
        #[arg(long)]
        init: Option<String>,
        /// Keep decoder weights fixed.
        #[arg(long)]
        freeze_decoder: bool,
        /// QA files to train on (comma separated); defaults to <out>/qa.jsonl.
        #[arg(long, value_delimiter = ',')]
        train_sets: Vec<PathBuf>,
    },
    /// Precompute context embeddings for every chunk into <out>/index.ccix.
    Compress {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Answer one question, or every held-out question.
    Generate {
        #[arg(long)]
        question: Option<String>,
        #[arg(long, value_enum, default_value_t = Mode::Compressed)]
        mode: Mode,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score answers on the held-out questions.
    Eval {
        #[arg(long, value_enum, default_value_t = Mode::Compressed)]
        mode: Mode,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Time generation without compression and at each configured rate.
    Profile {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Rates to compare (comma separated); overrides the config.
        #[arg(long, value_delimiter = ',')]
        rates: Vec<usize>,
    },
    /// Fine-tune and evaluate along one ablation axis.
    Ablate {
        #[arg(long, value_enum)]
        axis: Axis,
        /// Values for the `topk` axis (comma separated).
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
        /// QA files for the `train-sets` axis (comma separated).
        #[arg(long, value_delimiter = ',')]
        train_sets: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Compressed)]
        mode: Mode,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Chunk { .. } => "chunk",
            Command::BuildBm25 => "build-bm25",
            Command::Pretrain => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Compress { .. } => "compress",
            Command::Generate { .. } => "generate",
            Command::Eval { .. } => "eval",
            Command::Profile { .. } => "profile",
            Command::Ablate { .. } => "ablate",
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    let overrides = Overrides {
        seed: g.seed,
        out: g.out.clone(),
        xi: g.xi,
        compressor: g.compressor,
        top_k: g.topk,
        threads: g.threads,
    };
    let mut cfg = RunConfig::load(g.config.as_deref(), &overrides)?;
    if let Command::Profile { rates, .. } = &cli.command {
        if !rates.is_empty() {
            cfg.profile.rates = rates.clone();
        }
    }
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    cfg.write_resolved(cli.command.name())?;
    match &cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Chunk { corpus } => commands::chunk(&cfg, corpus.as_deref()),
        Command::BuildBm25 => commands::build_bm25(&cfg),
        Command::Pretrain => commands::pretrain(&cfg),
        Command::Finetune {
            mode,
            init,
            freeze_decoder,
            train_sets,
        } => commands::finetune(
            &cfg,
            &FinetuneArgs {
                mode: *mode,
                init: init.as_deref(),
                freeze_decoder: *freeze_decoder,
                train_sets,
            },
        ),
        Command::Compress { checkpoint } => commands::compress(&cfg, checkpoint.as_deref()),
        Command::Generate {
            question,
            mode,
            checkpoint,
        } => commands::generate(&cfg, *mode, question.as_deref(), checkpoint.as_deref()),
        Command::Eval { mode, checkpoint } => commands::eval(&cfg, *mode, checkpoint.as_deref()),
        Command::Profile { checkpoint, .. } => commands::profile(&cfg, checkpoint.as_deref()),
        Command::Ablate {
            axis,
            values,
            train_sets,
            mode,
        } => commands::ablate(&cfg, *axis, values, train_sets, *mode),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
