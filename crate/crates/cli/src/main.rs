//! `mmdr`: curate, train, index, search and evaluate from the command line.

mod cmd;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "mmdr", version, about = "Document-level multi-modal retrieval pipelines")]
struct Cli {
    /// Worker threads for parallel stages (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter a raw corpus and write accepted documents, rejects and statistics.
    Curate(CurateArgs),
    /// Fill in missing queries with an LLM endpoint.
    Annotate(AnnotateArgs),
    /// Write a synthetic corpus and its embedding stores.
    Synth(SynthArgs),
    /// Fit the fusion head on precomputed embeddings.
    Train(TrainArgs),
    /// Fuse document vectors with a checkpoint and build a search index.
    Index(IndexArgs),
    /// Rank indexed documents for every query in a query store.
    Search(SearchArgs),
    /// Compute MRR@10, NDCG@10 and HIT@k for judged queries.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct CurateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Rejects report (default: <out>.rejects.jsonl).
    #[arg(long)]
    pub rejects: Option<PathBuf>,
    /// Statistics report (default: <out>.stats.json).
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// JSON policy file; built-in per-domain defaults when absent.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// `.tiktoken` rank file; whitespace counting when absent.
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    /// Split the input belongs to, for the statistics counts.
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    /// Reject lines carrying unknown fields.
    #[arg(long)]
    pub strict: bool,
    /// Chat endpoint for the language-quality judge.
    #[arg(long)]
    pub judge_endpoint: Option<String>,
    /// Domains the judge applies to.
    #[arg(long, value_delimiter = ',', default_value = "slide")]
    pub judge_domains: Vec<String>,
    /// Judge audit log (JSONL).
    #[arg(long)]
    pub audit: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnnotateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Chat endpoint; falls back to the environment.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub audit: Option<PathBuf>,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub in_flight: u64,
    /// Also annotate documents that already have queries (appends one more).
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = SignalArg::Text)]
    pub signal: SignalArg,
    #[arg(long, default_value_t = 200)]
    pub docs: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 3)]
    pub max_images: usize,
    #[arg(long, default_value_t = 1)]
    pub queries_per_doc: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training corpus.
    #[arg(long, alias = "train")]
    pub corpus: PathBuf,
    /// Validation corpus; the training corpus is reused when absent.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub text_emb: PathBuf,
    #[arg(long)]
    pub img_emb: PathBuf,
    #[arg(long)]
    pub query_emb: PathBuf,
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_ckpt: PathBuf,
    /// Training log (default: <out-ckpt>.log.jsonl).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub warmup_frac: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub pos_weight: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub init_alpha: Option<f64>,
    #[arg(long)]
    pub freeze_logits: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    /// Corpus files whose documents are indexed (repeatable).
    #[arg(long, required = true)]
    pub corpus: Vec<PathBuf>,
    #[arg(long)]
    pub text_emb: PathBuf,
    #[arg(long)]
    pub img_emb: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = IndexKind::Flat)]
    pub kind: IndexKind,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub m_links: u64,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub ef_construction: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub ef_search: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the fused document vectors as a store.
    #[arg(long)]
    pub fused_out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub query_emb: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// Beam width override for HNSW indices.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub ef_search: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub query_emb: PathBuf,
    /// Rank test queries against train ∪ valid ∪ test.
    #[arg(long, requires_all = ["train", "valid", "test"], conflicts_with = "corpus")]
    pub full_collection: bool,
    #[arg(long, requires = "full_collection")]
    pub train: Option<PathBuf>,
    #[arg(long, requires = "full_collection")]
    pub valid: Option<PathBuf>,
    #[arg(long, requires = "full_collection")]
    pub test: Option<PathBuf>,
    /// Single corpus forming the whole pool (split-only protocol).
    #[arg(long, required_unless_present = "full_collection")]
    pub corpus: Option<PathBuf>,
    /// Judgments TSV; derived from the evaluated corpus queries when absent.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    #[arg(long)]
    pub train_domain: Option<String>,
    /// Search only the top 10 per query.
    #[arg(long)]
    pub truncate: bool,
    /// Method label for the table.
    #[arg(long, default_value = "model")]
    pub method: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Markdown table in the method × dataset layout.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SignalArg {
    Text,
    Image,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    Bce,
    Infonce,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FusionArg {
    WeightedSum,
    Mlp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum IndexKind {
    Flat,
    Hnsw,
}

/// Flag combinations clap cannot express; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Curate(a) => cmd::curate::run(a),
        Command::Annotate(a) => cmd::curate::annotate(a),
        Command::Synth(a) => cmd::synth::run(a),
        Command::Train(a) => cmd::train::run(a),
        Command::Index(a) => cmd::serve::index(a),
        Command::Search(a) => cmd::serve::search(a),
        Command::Eval(a) => cmd::eval::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
