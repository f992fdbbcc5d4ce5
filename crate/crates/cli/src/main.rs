//! `radar`: generate corpora, run the discovery pipeline, evaluate it and
//! diff policy versions.
//!
//! Exit codes: 0 success, 2 validation error, 3 backend outage, 4 internal
//! invariant violation.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use radar_core::backends::BackendError;

use crate::config::Overrides;

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_OUTAGE: u8 = 3;
pub const EXIT_INVARIANT: u8 = 4;

/// An error that already knows its exit code.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct Failure {
    pub code: u8,
    message: String,
}

impl Failure {
    pub fn new(code: u8, err: impl Into<anyhow::Error>) -> Self {
        Self { code, message: format!("{:#}", err.into()) }
    }

    pub fn validation(err: impl Into<anyhow::Error>) -> Self {
        Self::new(EXIT_VALIDATION, err)
    }
}

fn backend_code(err: &BackendError) -> u8 {
    match err {
        BackendError::InvalidInput { .. } => EXIT_VALIDATION,
        BackendError::Unavailable { .. } | BackendError::Protocol { .. } | BackendError::NotFound { .. } => EXIT_OUTAGE,
        BackendError::Precondition { .. } | BackendError::Conflict { .. } => EXIT_INVARIANT,
    }
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    use radar_core::error::Error;
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.code;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::InvalidInput(_) | Error::Serde(_) => EXIT_VALIDATION,
                Error::Backend(b) => backend_code(b),
                Error::Invariant(_) => EXIT_INVARIANT,
            };
        }
        if let Some(b) = cause.downcast_ref::<BackendError>() {
            return backend_code(b);
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() || cause.is::<toml::de::Error>() {
            return EXIT_VALIDATION;
        }
    }
    EXIT_INVARIANT
}

#[derive(Debug, Parser)]
#[command(name = "radar", version, about = "Discover emerging content issues and evolve annotation policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted ground truth.
    Synth(SynthArgs),
    /// Run the four-phase pipeline on a corpus.
    Run(RunArgs),
    /// Score the pipeline against gold labels.
    Eval(EvalArgs),
    /// Compare two versions of a policy document.
    PolicyDiff(DiffArgs),
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// Generator spec (TOML, or JSON with a .json extension).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Override the seed from the generator spec file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    /// Corpus JSONL (header line, then one item per line).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Policy document JSON.
    #[arg(long)]
    pub policy: PathBuf,
    /// TOML configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Synthetic sidecar whose prototypes feed the mock embedder.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Continue Phase 3 from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop the Phase-3 stream after this many items and write a checkpoint.
    #[arg(long)]
    pub stream_limit: Option<usize>,
}

#[derive(Debug, clap::Args)]
#[command(group(ArgGroup::new("protocol").required(true).args(["phase_wise", "end_to_end"])))]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Feed every phase clean gold input.
    #[arg(long)]
    pub phase_wise: bool,
    /// Score one full pipeline run.
    #[arg(long)]
    pub end_to_end: bool,
    /// Extra Phase-3 runs on shuffled input (phase-wise only).
    #[arg(long, default_value_t = 0, requires = "phase_wise")]
    pub shuffles: usize,
}

#[derive(Debug, clap::Args)]
pub struct DiffArgs {
    #[arg(long)]
    pub old: PathBuf,
    #[arg(long)]
    pub new: PathBuf,
    /// Also write diff.json, diff.txt and a manifest here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Run(args) => commands::run(args),
        Command::Eval(args) => commands::eval(args),
        Command::PolicyDiff(args) => commands::policy_diff(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
