//! `regionret`: batch driver for ingesting corpora, searching, evaluating
//! and self-checking the retrieval engine.
//!
//! Exit codes: 0 success, 1 validation or usage error, 2 I/O error.

mod config;
mod error;
mod eval;
mod ingest;
mod loss_check;
mod render;
mod search;
mod synth;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::config::ConfigFile;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "regionret", version, about = "Region-level multi-vector document retrieval")]
struct Cli {
    /// TOML file with default flag values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a directory of document files and write its manifest.
    Ingest(ingest::Args),
    /// Retrieve documents and regions for each query.
    Search(search::Args),
    /// Score search results against relevance judgments.
    Eval(eval::Args),
    /// Generate a synthetic corpus with planted regions.
    Synth(synth::Args),
    /// Run the loss value and gradient self-checks.
    LossCheck(loss_check::Args),
    /// Write saliency images and region boxes for one query and document.
    Render(render::Args),
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(a) => ingest::run(a),
        Command::Search(a) => search::run(a, &cfg),
        Command::Eval(a) => eval::run(a),
        Command::Synth(a) => synth::run(a, &cfg),
        Command::LossCheck(a) => loss_check::run(a, &cfg),
        Command::Render(a) => render::run(a, &cfg),
    }
}

/// Accepts either a manifest file or the directory holding `manifest.json`.
pub(crate) fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(regionret_core::format::MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

/// Writes `text` to `path`, or stdout when no path is given.
pub(crate) fn emit(path: Option<&Path>, text: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Io(format!("stdout: {e}")))
        }
    }
}

pub(crate) fn thread_pool(threads: Option<usize>) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
