//! chatvis: turn natural-language visualization requests into executable
//! scripts, and benchmark the results.
//!
//! Exit codes: 0 success, 1 operational failure, 2 usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use chatvis_core::bench::Variant;
use chatvis_core::corpus::ChunkKind;
use chatvis_core::gateway::ReplayMode;
use chatvis_core::orchestrator::Mode;

#[derive(Parser)]
#[command(
    name = "chatvis",
    version,
    about = "LLM-assisted visualization scripting with retrieval and self-correction"
)]
pub struct Cli {
    /// Config file (default: ./chatvis.toml when present).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Chunk a documentation tree and build the vector index.
    Ingest(IngestArgs),
    /// Run one prompt -> script session.
    Gen(GenArgs),
    /// Run the benchmark suite and write report files.
    Bench(BenchArgs),
    /// Compare two PNG images.
    Score(ScoreArgs),
    /// Parse interpreter tracebacks out of a log file.
    ExtractErrors(ExtractErrorsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Rag,
    Fewshot,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Rag => Mode::Rag,
            ModeArg::Fewshot => Mode::Fewshot,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum BackendArg {
    /// Live HTTP endpoint (LLM_BASE_URL / LLM_API_KEY / LLM_MODEL).
    Remote,
    /// Serve recorded replies from a transcript file.
    Replay,
    /// Live endpoint, teeing every exchange into a transcript file.
    Record,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ReplayMatchArg {
    Ordered,
    Digest,
}

impl From<ReplayMatchArg> for ReplayMode {
    fn from(m: ReplayMatchArg) -> ReplayMode {
        match m {
            ReplayMatchArg::Ordered => ReplayMode::Ordered,
            ReplayMatchArg::Digest => ReplayMode::ByDigest,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum KindArg {
    ApiDoc,
    CodeSnippet,
}

impl From<KindArg> for ChunkKind {
    fn from(k: KindArg) -> ChunkKind {
        match k {
            KindArg::ApiDoc => ChunkKind::ApiDoc,
            KindArg::CodeSnippet => ChunkKind::CodeSnippet,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Full,
    Quick,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::Quick => Variant::Quick,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum EmbedderArg {
    /// Deterministic offline hashed bag-of-words.
    Fallback,
    /// The gateway's embeddings endpoint.
    Remote,
}

#[derive(Args)]
pub struct IngestArgs {
    /// Documentation/snippet tree to chunk.
    #[arg(long)]
    pub docs: PathBuf,
    /// Output index file.
    #[arg(long)]
    pub index: PathBuf,
    /// Output corpus file (default: corpus.jsonl next to the index).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub max_lines: usize,
    #[arg(long, default_value_t = 10)]
    pub overlap_lines: usize,
    /// Regex marking a documented function heading (group 1 = symbol).
    #[arg(long)]
    pub doc_heading: Option<String>,
    #[arg(long, value_enum, default_value = "fallback")]
    pub embedder: EmbedderArg,
    /// Embedding model id for --embedder remote.
    #[arg(long, default_value = "text-embedding-3-small")]
    pub embed_model: String,
}

#[derive(Args)]
#[command(group(ArgGroup::new("prompt_source").required(true).args(["prompt", "prompt_file"])))]
pub struct GenArgs {
    /// The request, inline.
    #[arg(long)]
    pub prompt: Option<String>,
    /// The request, from a file.
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    /// Session work dir; scripts, artifacts and session.json land here.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "rag")]
    pub mode: ModeArg,
    /// Vector index file (required in rag mode).
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Corpus file (required in rag mode).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "remote")]
    pub backend: BackendArg,
    /// Transcript to replay from, or to record into.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "ordered")]
    pub replay_match: ReplayMatchArg,
    /// Interpreter command (whitespace-split; script path is appended).
    #[arg(long)]
    pub interpreter: Option<String>,
    /// Interpreter timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// File the script must produce for the session to count as success.
    #[arg(long)]
    pub expected_artifact: Option<String>,
    /// Retrieved chunks per operation step.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub budget_chars: Option<usize>,
    /// Restrict retrieval to one chunk kind.
    #[arg(long, value_enum)]
    pub kind_filter: Option<KindArg>,
    /// Load prompt templates from a directory instead of the built-ins.
    #[arg(long)]
    pub prompts_dir: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Suite directory of task subdirectories.
    #[arg(long)]
    pub suite: PathBuf,
    /// Output dir for work dirs and report files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "rag,fewshot")]
    pub modes: Vec<ModeArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "full")]
    pub variants: Vec<VariantArg>,
    #[arg(long, value_enum, default_value = "remote")]
    pub backend: BackendArg,
    /// Directory of per-session transcripts named <task>.<mode>.<variant>.jsonl.
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "ordered")]
    pub replay_match: ReplayMatchArg,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub interpreter: Option<String>,
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub budget_chars: Option<usize>,
    #[arg(long, value_enum)]
    pub kind_filter: Option<KindArg>,
    #[arg(long)]
    pub prompts_dir: Option<PathBuf>,
    /// LPIPS scorer command template with {A} and {B} placeholders.
    #[arg(long)]
    pub lpips_plugin: Option<String>,
    /// Downscale mismatched images to the common size before scoring.
    #[arg(long)]
    pub resize: bool,
    /// Worker threads per cell.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Args)]
pub struct ScoreArgs {
    pub image_a: PathBuf,
    pub image_b: PathBuf,
    #[arg(long)]
    pub lpips_plugin: Option<String>,
    #[arg(long)]
    pub resize: bool,
}

#[derive(Args)]
pub struct ExtractErrorsArgs {
    /// Interpreter log file to scan.
    pub log: PathBuf,
}

/// Failures that should exit 2 (misuse) vs 1 (operational).
pub enum CliError {
    Usage(String),
    Failure(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Failure(e.into())
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(args) => commands::ingest(&cli, args),
        Command::Gen(args) => commands::gen(&cli, args),
        Command::Bench(args) => commands::bench(&cli, args),
        Command::Score(args) => commands::score(args),
        Command::ExtractErrors(args) => commands::extract_errors(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            eprintln!("run with --help for details");
            ExitCode::from(2)
        }
        Err(CliError::Failure(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
