mod commands;
mod config;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Binary function similarity search over ESIL function strings.
///
/// Values are resolved as: command-line flag, then the `--config` file,
/// then the built-in default shown in each flag's help.
#[derive(Debug, Parser)]
#[command(name = "faser", version)]
pub struct Cli {
    /// TOML file with [normalize], [vocab], [encoder], [sampler], [loss],
    /// [optimizer], [train], [index], [eval] and [fixtures] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads; 1 gives bitwise-reproducible results [default: all cores]
    #[arg(long, global = true, env = "FASER_THREADS")]
    pub threads: Option<usize>,

    /// Suppress progress events on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lifted-function corpus to function strings.
    Ingest(IngestArgs),
    /// Replace immediates, addresses and (optionally) registers by placeholders.
    Normalize(NormalizeArgs),
    /// Drop duplicate (label, body) records and labels left with one body.
    Dedup(DedupArgs),
    /// Build a vocabulary or encode functions to ids.
    #[command(subcommand)]
    Vocab(VocabCommand),
    /// Metric-learning training of the encoder.
    Train(TrainArgs),
    /// Build an embedding store or search it.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Retrieval evaluation.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Synthetic corpora.
    #[command(subcommand)]
    Fixtures(FixturesCommand),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Line-delimited JSON corpus of lifted functions.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    /// Function strings from `ingest`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also map registers to reg32/reg64 [default: off]
    #[arg(long)]
    pub register_norm: bool,
    /// Smallest decimal treated as an address [default: 4096]
    #[arg(long)]
    pub addr_min: Option<u64>,
    /// JSON object per architecture mapping register names to 32 or 64,
    /// overriding the built-in tables.
    #[arg(long)]
    pub reg_table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the JSON dedup report [default: stdout only]
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum VocabCommand {
    /// Vocabulary file from a normalized corpus.
    Build(VocabBuildArgs),
    /// Normalized functions to padded id sequences (JSON lines).
    Encode(VocabEncodeArgs),
}

#[derive(Debug, Args)]
pub struct VocabBuildArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Drop tokens seen fewer times [default: 1]
    #[arg(long)]
    pub min_frequency: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VocabEncodeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sequence length including CLS [default: 128]
    #[arg(long)]
    pub input_len: Option<usize>,
    /// Also make every k-th position global; 0 means CLS only [default: 0]
    #[arg(long)]
    pub global_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Normalized, deduplicated corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Receives checkpoint.fasr, train_log.jsonl and manifest.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Initialisation and sampling seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra checkpoint every N optimizer steps [default: off]
    #[arg(long)]
    pub save_every: Option<u64>,
    /// [default: 18]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 8]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Functions drawn per epoch [default: 100000]
    #[arg(long)]
    pub functions_per_epoch: Option<usize>,
    /// [default: 0.0005]
    #[arg(long)]
    pub learning_rate: Option<f32>,
    /// Micro-batches per optimizer step [default: 64]
    #[arg(long)]
    pub accumulation_steps: Option<usize>,
    /// Circle Loss relaxation margin [default: 0.25]
    #[arg(long)]
    pub margin: Option<f64>,
    /// Circle Loss scale [default: 256]
    #[arg(long)]
    pub scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    /// Embed a normalized corpus into a store file.
    Build(IndexBuildArgs),
    /// Top-k most similar stored functions to one corpus function.
    Search(IndexSearchArgs),
}

#[derive(Debug, Args)]
pub struct IndexBuildArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Functions embedded per batch [default: 64]
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IndexSearchArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Normalized corpus holding the query function.
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Label of the query; the first matching record is used.
    #[arg(long)]
    pub query_fn: String,
    /// Restrict the query to this binary id.
    #[arg(long)]
    pub query_binary: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    /// Pools per run [default: 1000]
    #[arg(long)]
    pub num_pools: Option<usize>,
    /// Negatives per pool [default: 100]
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Pool sampling seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Recall@1 and MRR@10 over random search pools.
    Pools(EvalPoolsArgs),
    /// Rank a whole target corpus for each labelled query.
    Vuln(EvalVulnArgs),
    /// Pools whose queries come from an architecture unseen in training.
    ZeroShot(EvalZeroShotArgs),
}

#[derive(Debug, Args)]
pub struct EvalPoolsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub pools: PoolArgs,
    /// Per-pool JSON lines followed by a summary line [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct EvalVulnArgs {
    /// Normalized query functions; the label names the vulnerable function.
    #[arg(long)]
    pub queries: PathBuf,
    /// Normalized target corpus searched for every query.
    #[arg(long)]
    pub target: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct EvalZeroShotArgs {
    /// Normalized corpus the checkpoint was trained on.
    #[arg(long)]
    pub train_corpus: PathBuf,
    /// Normalized evaluation corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Architecture absent from training.
    #[arg(long)]
    pub holdout: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub pools: PoolArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum FixturesCommand {
    /// Write a synthetic lifted-function corpus.
    Generate(FixturesArgs),
}

#[derive(Debug, Args)]
pub struct FixturesArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// [default: 200]
    #[arg(long)]
    pub labels: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    pub variants: Option<usize>,
    /// Comma-separated architectures, one per variant in turn
    /// [default: x86-64,arm64,mips32,riscv64]
    #[arg(long, value_delimiter = ',')]
    pub architectures: Option<Vec<String>>,
    /// Render every variant for the first architecture.
    #[arg(long)]
    pub no_arch_renaming: bool,
    /// Substitution, insertion, deletion and register-renaming rate [default: 0.1]
    #[arg(long)]
    pub mutation: Option<f64>,
    /// Override the register-renaming rate alone.
    #[arg(long)]
    pub register_renaming: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
