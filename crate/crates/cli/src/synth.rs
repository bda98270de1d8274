use std::path::PathBuf;

use regionret_core::synth::{self, SynthConfig};

use crate::config::ConfigFile;
use crate::error::CliResult;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    docs: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    rows: Option<u32>,
    #[arg(long)]
    cols: Option<u32>,
    #[arg(long)]
    patch_h: Option<u32>,
    #[arg(long)]
    patch_w: Option<u32>,
    #[arg(long)]
    img_h: Option<u32>,
    #[arg(long)]
    img_w: Option<u32>,
    #[arg(long)]
    block_rows: Option<u32>,
    #[arg(long)]
    block_cols: Option<u32>,
    /// Off-topic perturbation of planted patches.
    #[arg(long)]
    noise: Option<f64>,
}

impl Args {
    fn config(&self, file: &ConfigFile) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            seed: self.seed.or(file.seed).unwrap_or(d.seed),
            docs: self.docs.unwrap_or(d.docs),
            queries: self.queries.unwrap_or(d.queries),
            dim: self.dim.unwrap_or(d.dim),
            rows: self.rows.unwrap_or(d.rows),
            cols: self.cols.unwrap_or(d.cols),
            patch_h: self.patch_h.unwrap_or(d.patch_h),
            patch_w: self.patch_w.unwrap_or(d.patch_w),
            img_h: self.img_h.or(d.img_h),
            img_w: self.img_w.or(d.img_w),
            block_rows: self.block_rows.unwrap_or(d.block_rows),
            block_cols: self.block_cols.unwrap_or(d.block_cols),
            noise: self.noise.unwrap_or(d.noise),
        }
    }
}

pub fn run(args: Args, file: &ConfigFile) -> CliResult<()> {
    let cfg = args.config(file);
    let corpus = synth::generate(&cfg)?;
    synth::write_corpus(&corpus, &args.out)?;
    println!(
        "wrote {} documents and {} queries to {}",
        corpus.docs.len(),
        corpus.queries.len(),
        args.out.display()
    );
    Ok(())
}
