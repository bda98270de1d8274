use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use regionret_core::format::{self, ResultRecord};
use regionret_core::{HyperParams, QueryEmbedding};

use crate::config::ConfigFile;
use crate::error::{CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Corpus manifest, or the directory containing it.
    #[arg(long)]
    manifest: PathBuf,

    /// Query files, or directories of them (read in sorted order).
    #[arg(long, required = true, num_args = 1..)]
    queries: Vec<PathBuf>,

    /// Documents to return per query.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: Option<u64>,

    /// Saliency threshold for region proposal.
    #[arg(long, allow_negative_numbers = true)]
    eta: Option<f64>,

    /// Chebyshev neighbor range joining salient patches.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    radius: Option<u32>,

    /// Keep only this many regions across all returned documents.
    #[arg(long)]
    region_cap: Option<usize>,

    /// Pixel area above which crops are downscaled for token accounting.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pixel_budget: Option<u64>,

    /// Worker threads (default: one per core).
    #[arg(long)]
    threads: Option<usize>,

    /// Write JSON lines here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

pub const DEFAULT_K: usize = 10;

/// Expands directories into their `.rrag` files, sorted by path.
pub fn expand_inputs(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.extension().is_some_and(|x| x == format::EXTENSION))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn load_queries(inputs: &[PathBuf]) -> CliResult<Vec<QueryEmbedding>> {
    expand_inputs(inputs)?
        .iter()
        .map(|p| format::read_query_file(p).map_err(CliError::from))
        .collect()
}

pub fn hyper_params(
    eta: Option<f64>,
    radius: Option<u32>,
    pixel_budget: Option<u64>,
    cfg: &ConfigFile,
) -> CliResult<HyperParams> {
    let eta = eta
        .or(cfg.eta)
        .ok_or_else(|| CliError::Usage("--eta is required (no default threshold)".into()))?;
    let hp = HyperParams {
        radius: radius.or(cfg.radius).unwrap_or(HyperParams::DEFAULT_RADIUS),
        pixel_budget: pixel_budget
            .or(cfg.pixel_budget)
            .unwrap_or(HyperParams::DEFAULT_PIXEL_BUDGET),
        ..HyperParams::new(eta)
    };
    hp.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(hp)
}

fn search(
    manifest: &Path,
    queries: &[QueryEmbedding],
    k: usize,
    hp: &HyperParams,
    cap: Option<usize>,
) -> CliResult<Vec<ResultRecord>> {
    let (_, corpus) = format::load_corpus(manifest)?;
    queries
        .par_iter()
        .map(|q| {
            let r = corpus
                .retrieve_regions(q, k, hp, cap)
                .map_err(|e| CliError::from(e).context(format!("query {}", q.query_id)))?;
            Ok(ResultRecord::from_result(&q.query_id, &r))
        })
        .collect()
}

pub fn run(args: Args, cfg: &ConfigFile) -> CliResult<()> {
    let k = match args.k {
        Some(k) => k as usize,
        None => cfg.k.unwrap_or(DEFAULT_K),
    };
    if k == 0 {
        return Err(CliError::Usage("k must be at least 1".into()));
    }
    let hp = hyper_params(args.eta, args.radius, args.pixel_budget, cfg)?;
    let cap = args.region_cap.or(cfg.region_cap);
    let queries = load_queries(&args.queries)?;
    if queries.is_empty() {
        return Err(CliError::Invalid("no query files found".into()));
    }

    let pool = crate::thread_pool(args.threads.or(cfg.threads))?;
    let manifest = crate::manifest_path(&args.manifest);
    let records = pool.install(|| search(&manifest, &queries, k, &hp, cap))?;

    let mut buf = Vec::new();
    format::write_jsonl(&mut buf, &records).map_err(|e| CliError::Io(e.to_string()))?;
    crate::emit(args.output.as_deref(), &buf)
}
