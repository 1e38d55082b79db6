//! `scoder` — batch entry points for the pre-training pipeline.
//!
//! Subcommands: `gen-toy`, `build-pairs`, `train`, `eval`, `search`. Every
//! command exits 0 on success and prints a single `error: <Kind>: ...` line
//! on failure. All randomness is keyed to `--seed`; the `SCODER_SEED`
//! environment variable overrides the flag when set. Outputs are pure
//! functions of inputs plus the seed, so re-running a command overwrites its
//! outputs with identical bytes.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use scoder_core::encoder::{EncoderParams, Vocab};
use scoder_core::eval::{
    embed_corpus, gen_toy_corpus, knn_search, read_task_jsonl, run_eval, write_task_jsonl,
};
use scoder_core::jsonl::{read_jsonl, write_jsonl};
use scoder_core::pairgen::{build_pair_corpus, BuildStrategy, FunctionRecord, PositivePair};
use scoder_core::training::{run_pretraining, PretrainOptions};

#[derive(Parser)]
#[command(
    name = "scoder",
    about = "Soft-labeled contrastive pre-training for code retrieval",
    version
)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic toy corpus and its two retrieval tasks.
    GenToy {
        /// Number of function families (2-6).
        #[arg(long, default_value_t = 4)]
        families: usize,
        /// Instances per family (>= 2); one fifth is held out.
        #[arg(long, default_value_t = 50)]
        per_family: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for corpus.jsonl, train.jsonl, held_out.jsonl
        /// and the two task files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build positive pairs from a function-record corpus.
    BuildPairs {
        /// Input corpus (JSONL of function records).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Minimum byte length of an extracted span.
        #[arg(long, default_value_t = 20)]
        lmin: usize,
        /// Output pair file (JSONL).
        #[arg(long)]
        out: PathBuf,
    },
    /// Warm-up plus iterative adversarial pre-training.
    Train {
        /// Pair file(s) from build-pairs; repeat the flag to mix strategies.
        #[arg(long, required = true)]
        pairs: Vec<PathBuf>,
        /// Function-record corpus used as the hard-negative pool.
        #[arg(long)]
        corpus: PathBuf,
        /// Flat key=value config file; missing keys use the defaults shown
        /// by `scoder print-config`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for checkpoints, vocab, metrics and config echo.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a trained model on a retrieval task file.
    Eval {
        /// Model directory produced by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Task file (JSONL) from gen-toy.
        #[arg(long)]
        task: PathBuf,
        /// Report output path (summary plus per-query CSV).
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank corpus functions against free-text queries.
    Search {
        /// Model directory produced by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Function-record corpus (JSONL) to search over.
        #[arg(long)]
        corpus: PathBuf,
        /// Text file with one query per line.
        #[arg(long)]
        query_file: PathBuf,
        /// Results per query.
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Print every config key at its default value.
    PrintConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Comment,
    Asst,
    TransformRename,
    TransformDeadcode,
    IctToken,
    IctLine,
}

impl From<StrategyArg> for BuildStrategy {
    fn from(s: StrategyArg) -> BuildStrategy {
        match s {
            StrategyArg::Comment => BuildStrategy::Comment,
            StrategyArg::Asst => BuildStrategy::Asst,
            StrategyArg::TransformRename => BuildStrategy::TransformRename,
            StrategyArg::TransformDeadcode => BuildStrategy::TransformDeadcode,
            StrategyArg::IctToken => BuildStrategy::IctToken,
            StrategyArg::IctLine => BuildStrategy::IctLine,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: BadFlag: --threads must be >= 1");
            return ExitCode::FAILURE;
        }
        // A second initialization in the same process is an error we can
        // ignore: the pool is already capped.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

/// `SCODER_SEED` beats the flag so a whole recipe can be re-seeded without
/// editing five command lines.
fn effective_seed(flag: u64) -> Result<u64, String> {
    match std::env::var("SCODER_SEED") {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map_err(|_| format!("BadSeed: SCODER_SEED={v:?} is not an unsigned integer")),
        Err(_) => Ok(flag),
    }
}

fn run(cmd: Command) -> Result<(), String> {
    match cmd {
        Command::GenToy { families, per_family, seed, out } => {
            let seed = effective_seed(seed)?;
            let corpus =
                gen_toy_corpus(families, per_family, seed).map_err(|e| e.to_string())?;
            std::fs::create_dir_all(&out)
                .map_err(|e| format!("Io: {}: {e}", out.display()))?;
            write_jsonl(&out.join("corpus.jsonl"), &corpus.all_records())
                .map_err(|e| e.to_string())?;
            write_jsonl(&out.join("train.jsonl"), &corpus.train).map_err(|e| e.to_string())?;
            write_jsonl(&out.join("held_out.jsonl"), &corpus.held_out)
                .map_err(|e| e.to_string())?;
            write_task_jsonl(&out.join("comment_to_code.jsonl"), &corpus.comment_to_code)
                .map_err(|e| e.to_string())?;
            write_task_jsonl(&out.join("code_to_code.jsonl"), &corpus.code_to_code)
                .map_err(|e| e.to_string())?;
            println!(
                "wrote {} train / {} held-out records and 2 tasks to {}",
                corpus.train.len(),
                corpus.held_out.len(),
                out.display()
            );
            Ok(())
        }
        Command::BuildPairs { input, strategy, seed, lmin, out } => {
            let seed = effective_seed(seed)?;
            let records: Vec<FunctionRecord> =
                read_jsonl(&input).map_err(|e| e.to_string())?;
            if records.is_empty() {
                return Err(format!("EmptyOutput: no records in {}", input.display()));
            }
            let mut cfg = scoder_core::pairgen::PairGenConfig::default();
            cfg.asst.l_min = lmin;
            let corpus = build_pair_corpus(&records, strategy.into(), &cfg, seed)
                .map_err(|e| e.to_string())?;
            if corpus.pairs.is_empty() {
                return Err(format!(
                    "EmptyOutput: 0 pairs from {} records ({})",
                    records.len(),
                    corpus.report
                ));
            }
            write_jsonl(&out, &corpus.pairs).map_err(|e| e.to_string())?;
            let skipped: usize = corpus.report.skipped.values().sum();
            println!(
                "wrote {} pairs to {} ({skipped} records skipped)",
                corpus.pairs.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train { pairs, corpus, config, seed, out_dir } => {
            let seed = effective_seed(seed)?;
            let mut cfg = match &config {
                Some(path) => RunConfig::from_file(path).map_err(|e| e.to_string())?,
                None => RunConfig::default(),
            };
            cfg.train.seed = seed;
            let records: Vec<FunctionRecord> =
                read_jsonl(&corpus).map_err(|e| e.to_string())?;
            let mut all_pairs: Vec<PositivePair> = Vec::new();
            for p in &pairs {
                let mut chunk: Vec<PositivePair> = read_jsonl(p).map_err(|e| e.to_string())?;
                all_pairs.append(&mut chunk);
            }
            if all_pairs.is_empty() {
                return Err("EmptyOutput: no pairs to train on".into());
            }
            let mut opts = PretrainOptions::new(cfg.encoder, cfg.train);
            opts.out_dir = Some(out_dir.clone());
            let out = run_pretraining::<f64>(&records, &all_pairs, &opts)
                .map_err(|e| e.to_string())?;
            println!(
                "trained on {} pairs; artifacts in {} ({} metric rows)",
                all_pairs.len(),
                out_dir.display(),
                out.metrics.len()
            );
            Ok(())
        }
        Command::Eval { model, task, out } => {
            let (dual, vocab) = load_model(&model)?;
            let task = read_task_jsonl(&task).map_err(|e| e.to_string())?;
            let report = run_eval(&dual, &vocab, &task).map_err(|e| e.to_string())?;
            let text = format!("{}\n{}", report.summary(), report.per_query_csv());
            std::fs::write(&out, &text).map_err(|e| format!("Io: {}: {e}", out.display()))?;
            println!("{}: {} = {:.6}", report.kind, report.metric, report.score);
            Ok(())
        }
        Command::Search { model, corpus, query_file, k } => {
            let (dual, vocab) = load_model(&model)?;
            let records: Vec<FunctionRecord> =
                read_jsonl(&corpus).map_err(|e| e.to_string())?;
            if records.is_empty() {
                return Err(format!("EmptyOutput: no records in {}", corpus.display()));
            }
            let items: Vec<(String, String)> =
                records.iter().map(|r| (r.id.clone(), r.code.clone())).collect();
            let index =
                embed_corpus(&dual, &vocab, &items, "search").map_err(|e| e.to_string())?;
            let queries = std::fs::read_to_string(&query_file)
                .map_err(|e| format!("Io: {}: {e}", query_file.display()))?;
            let embeddings = scoder_core::encoder::encode_batch(
                &dual,
                &vocab,
                &queries.lines().map(str::to_string).collect::<Vec<_>>(),
            )
            .map_err(|e| e.to_string())?;
            for (qi, (line, emb)) in queries.lines().zip(&embeddings).enumerate() {
                let ranked = knn_search(&index, emb, k).map_err(|e| e.to_string())?;
                for (rank, id) in ranked.iter().enumerate() {
                    println!("{qi}\t{}\t{rank}\t{id}", line.trim());
                }
            }
            Ok(())
        }
        Command::PrintConfig => {
            print!("{}", RunConfig::default().to_key_values());
            Ok(())
        }
    }
}

/// Loads the dual encoder and vocabulary from a `train` output directory.
fn load_model(dir: &Path) -> Result<(EncoderParams<f64>, Vocab), String> {
    let meta_path = dir.join("model.meta.json");
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(&meta_path)
            .map_err(|e| format!("Io: {}: {e}", meta_path.display()))?,
    )
    .map_err(|e| format!("BadModel: {}: {e}", meta_path.display()))?;
    let enc: scoder_core::encoder::EncoderConfig =
        serde_json::from_value(meta["encoder"].clone())
            .map_err(|e| format!("BadModel: {}: bad encoder config: {e}", meta_path.display()))?;
    let vocab = Vocab::load(&dir.join("vocab.txt")).map_err(|e| e.to_string())?;
    let mut dual = EncoderParams::<f64>::init(enc, 0, false).map_err(|e| e.to_string())?;
    let ckpt = scoder_core::autodiff::load_checkpoint::<f64>(&dir.join("model.final"))
        .map_err(|e| e.to_string())?;
    for (name, tensor) in dual.params.iter_mut() {
        let full = format!("dual.{name}");
        let loaded = ckpt.get(&full).ok_or_else(|| {
            format!("BadModel: checkpoint is missing parameter {full:?}")
        })?;
        if loaded.shape() != tensor.shape() {
            return Err(format!(
                "BadModel: parameter {full:?} has shape {:?}, expected {:?}",
                loaded.shape(),
                tensor.shape()
            ));
        }
        tensor.data_mut().copy_from_slice(loaded.data());
    }
    Ok((dual, vocab))
}
