use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use regionret_core::format::{self, EmbeddingRecord, FormatError, Manifest};
use regionret_core::PatchGrid;

use crate::error::{CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Directory of `.rrag` document files. The manifest is written here.
    dir: PathBuf,
}

enum Outcome {
    Ok(PatchGrid),
    Failed { reason: String, io: bool },
}

fn check_file(path: &Path) -> Outcome {
    match format::read_embedding_file(path) {
        Ok(EmbeddingRecord::Document(g)) => Outcome::Ok(g),
        Ok(EmbeddingRecord::Query(q)) => Outcome::Failed {
            reason: format!("holds query {:?}, expected a document", q.query_id),
            io: false,
        },
        Err(e) => Outcome::Failed {
            io: matches!(e, FormatError::Io { .. }),
            reason: e.to_string(),
        },
    }
}

pub fn run(args: Args) -> CliResult<()> {
    let dir = &args.dir;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::io(dir, e))?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|x| x == format::EXTENSION));
    files.sort();
    if files.is_empty() {
        return Err(CliError::Invalid(format!(
            "{}: empty corpus, no .{} files found",
            dir.display(),
            format::EXTENSION
        )));
    }

    let mut accepted: BTreeMap<String, (PatchGrid, String)> = BTreeMap::new();
    let (mut failures, mut io_failure) = (0usize, false);
    for path in &files {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let outcome = match check_file(path) {
            Outcome::Ok(g) if accepted.contains_key(&g.doc_id) => Outcome::Failed {
                reason: format!("duplicate doc id {:?} (also in {})", g.doc_id, accepted[&g.doc_id].1),
                io: false,
            },
            Outcome::Ok(g) => match accepted.values().next() {
                Some((first, _)) if first.dim() != g.dim() => Outcome::Failed {
                    reason: format!("dimension {} differs from corpus dimension {}", g.dim(), first.dim()),
                    io: false,
                },
                _ => Outcome::Ok(g),
            },
            failed => failed,
        };
        match outcome {
            Outcome::Ok(g) => {
                println!("ok\t{name}\t{}\t{}x{}", g.doc_id, g.geometry.rows, g.geometry.cols);
                accepted.insert(g.doc_id.clone(), (g, name));
            }
            Outcome::Failed { reason, io } => {
                println!("invalid\t{name}\t{reason}");
                failures += 1;
                io_failure |= io;
            }
        }
    }

    if failures > 0 {
        let msg = format!("{failures} of {} files invalid, manifest not written", files.len());
        return Err(if io_failure {
            CliError::Io(msg)
        } else {
            CliError::Invalid(msg)
        });
    }
    let entries: Vec<(&PatchGrid, String)> = accepted.values().map(|(g, f)| (g, f.clone())).collect();
    let manifest = Manifest::build(&entries, None)?;
    let path = dir.join(format::MANIFEST_FILE);
    manifest.write(&path)?;
    println!("manifest\t{}\t{} documents", path.display(), manifest.docs.len());
    Ok(())
}
