use std::fmt::Write as _;
use std::path::PathBuf;

use regionret_core::format;
use regionret_core::{binarize, regions_from_saliency, saliency_map, Error};

use crate::config::ConfigFile;
use crate::error::{CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Corpus manifest, or the directory containing it.
    #[arg(long)]
    manifest: PathBuf,
    /// Query file.
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    doc: String,
    #[arg(long, allow_negative_numbers = true)]
    eta: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    radius: Option<u32>,
    /// Output prefix: writes `<out>.pgm`, `<out>.masked.pgm` and
    /// `<out>.regions.txt`.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: Args, cfg: &ConfigFile) -> CliResult<()> {
    let hp = crate::search::hyper_params(args.eta, args.radius, None, cfg)?;
    let (_, corpus) = format::load_corpus(&crate::manifest_path(&args.manifest))?;
    let grid = corpus
        .get(&args.doc)
        .ok_or_else(|| CliError::from(Error::UnknownDocId(args.doc.clone())))?;
    let q = format::read_query_file(&args.query)?;

    let s = saliency_map(&q, grid)?;
    let mask = binarize(&s, hp.eta);
    let regions = regions_from_saliency(&s, &grid.geometry, hp.eta, hp.radius as usize)?;

    let with_ext = |ext: &str| {
        let mut p = args.out.clone().into_os_string();
        p.push(ext);
        PathBuf::from(p)
    };
    let pgm = with_ext(".pgm");
    format::render_saliency(&s, Some(&mask), &pgm)?;

    let g = &grid.geometry;
    let mut text = format!(
        "# doc {} query {} eta {} radius {} image {}x{}\n# x1 y1 x2 y2 peak mean patches\n",
        grid.doc_id, q.query_id, hp.eta, hp.radius, g.img_w, g.img_h
    );
    for r in &regions {
        let b = r.bbox;
        let _ = writeln!(
            text,
            "{} {} {} {} {:.6} {:.6} {}",
            b.x1,
            b.y1,
            b.x2,
            b.y2,
            r.peak_score,
            r.mean_score,
            r.component.len()
        );
    }
    let txt = with_ext(".regions.txt");
    std::fs::write(&txt, text).map_err(|e| CliError::io(&txt, e))?;
    println!(
        "{}\n{}\n{}",
        pgm.display(),
        format::masked_path(&pgm).display(),
        txt.display()
    );
    Ok(())
}
