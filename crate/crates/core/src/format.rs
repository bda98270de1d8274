//! On-disk formats: binary embedding files, the JSON corpus manifest,
//! JSONL result/judgment streams and plain-PGM saliency renders.
//!
//! # Embedding file layout
//!
//! All integers and floats are little-endian.
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `b"RRAG"` |
//! | 4 | 2 | version, `u16`, currently 1 |
//! | 6 | 2 | kind, `u16`: 0 document, 1 query vector, 2 query token vectors |
//! | 8 | 4 | `d`, `u32` |
//! | 12 | 4 | `rows`, `u32` (queries: number of stored vectors) |
//! | 16 | 4 | `cols`, `u32` (queries: 1) |
//! | 20 | 16 | `patch_h`, `patch_w`, `img_h`, `img_w`, `u32` each (queries: 0) |
//! | 36 | 4 | id length in bytes, `u32` |
//! | 40 | id length | UTF-8 id |
//! | … | rows·cols·d·4 | `f32` components, row-major, vector by vector |
//!
//! A kind-1 query stores exactly one vector, used as-is. A kind-2 query
//! stores its raw token vectors; the query vector is recomputed on read as
//! their mean followed by L2 normalization. Values are held as `f64` in
//! memory and narrowed to `f32` on write.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Error;
use crate::index::{Corpus, RetrievalResult, TokenReport};
use crate::similarity::DocScore;
use crate::types::{GridGeometry, Mask, PatchGrid, QueryEmbedding, SaliencyMap};

pub const MAGIC: &[u8; 4] = b"RRAG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 40;
/// File extension used for embedding files.
pub const EXTENSION: &str = "rrag";

const KIND_DOCUMENT: u16 = 0;
const KIND_QUERY_VECTOR: u16 = 1;
const KIND_QUERY_TOKENS: u16 = 2;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("validation failed: {0}")]
    Validation(#[from] Error),

    #[error("{path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

impl FormatError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn parse(offset: usize, reason: impl Into<String>) -> Self {
        Self::Parse {
            offset,
            reason: reason.into(),
        }
    }
}

/// Contents of one embedding file.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingRecord {
    Document(PatchGrid),
    Query(QueryEmbedding),
}

impl EmbeddingRecord {
    pub fn id(&self) -> &str {
        match self {
            Self::Document(g) => &g.doc_id,
            Self::Query(q) => &q.query_id,
        }
    }
}

struct Header {
    kind: u16,
    dim: u32,
    rows: u32,
    cols: u32,
    geometry: [u32; 4],
    id: String,
}

fn encode(h: &Header, vectors: &[Vec<f64>]) -> Vec<u8> {
    let floats: usize = vectors.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + h.id.len() + floats * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&h.kind.to_le_bytes());
    for v in [h.dim, h.rows, h.cols] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in h.geometry {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(h.id.len() as u32).to_le_bytes());
    out.extend_from_slice(h.id.as_bytes());
    for x in vectors.iter().flatten() {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    out
}

pub fn encode_document(grid: &PatchGrid) -> Result<Vec<u8>, FormatError> {
    grid.validate()?;
    let g = &grid.geometry;
    Ok(encode(
        &Header {
            kind: KIND_DOCUMENT,
            dim: grid.dim() as u32,
            rows: g.rows,
            cols: g.cols,
            geometry: [g.patch_h, g.patch_w, g.img_h, g.img_w],
            id: grid.doc_id.clone(),
        },
        &grid.embeddings,
    ))
}

pub fn encode_query(q: &QueryEmbedding) -> Result<Vec<u8>, FormatError> {
    q.validate()?;
    let (kind, vectors) = match &q.raw_token_vectors {
        Some(tokens) => (KIND_QUERY_TOKENS, tokens.as_slice()),
        None => (KIND_QUERY_VECTOR, std::slice::from_ref(&q.vector)),
    };
    Ok(encode(
        &Header {
            kind,
            dim: q.dim() as u32,
            rows: vectors.len() as u32,
            cols: 1,
            geometry: [0; 4],
            id: q.query_id.clone(),
        },
        vectors,
    ))
}

pub fn encode_record(record: &EmbeddingRecord) -> Result<Vec<u8>, FormatError> {
    match record {
        EmbeddingRecord::Document(g) => encode_document(g),
        EmbeddingRecord::Query(q) => encode_query(q),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::parse(
                self.bytes.len(),
                format!("truncated while reading {what}"),
            )),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses and validates an embedding file image. Never panics.
pub fn decode(bytes: &[u8]) -> Result<EmbeddingRecord, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(FormatError::parse(0, "bad magic"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let kind_at = r.pos;
    let kind = r.u16("kind")?;
    let dim = r.u32("dim")?;
    let rows = r.u32("rows")?;
    let cols = r.u32("cols")?;
    let mut geometry = [0u32; 4];
    for (i, name) in ["patch_h", "patch_w", "img_h", "img_w"].iter().enumerate() {
        geometry[i] = r.u32(name)?;
    }
    let id_len = r.u32("id length")? as usize;
    let id_at = r.pos;
    let id = std::str::from_utf8(r.take(id_len, "id")?)
        .map_err(|e| FormatError::parse(id_at + e.valid_up_to(), "id is not valid UTF-8"))?
        .to_string();

    if dim == 0 {
        return Err(FormatError::parse(8, "dimension must be positive"));
    }
    let count = rows as u64 * cols as u64;
    let payload = count
        .checked_mul(dim as u64)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FormatError::parse(12, "payload size overflows"))?;
    let remaining = (bytes.len() - r.pos) as u64;
    if remaining < payload {
        return Err(FormatError::parse(
            bytes.len(),
            format!("truncated payload: expected {payload} bytes, found {remaining}"),
        ));
    }
    if remaining > payload {
        return Err(FormatError::parse(
            r.pos + payload as usize,
            format!("{} trailing bytes", remaining - payload),
        ));
    }

    let dim = dim as usize;
    let vectors: Vec<Vec<f64>> = bytes[r.pos..]
        .chunks_exact(4 * dim)
        .map(|v| {
            v.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect()
        })
        .collect();

    match kind {
        KIND_DOCUMENT => {
            let [patch_h, patch_w, img_h, img_w] = geometry;
            let grid = PatchGrid {
                doc_id: id,
                geometry: GridGeometry {
                    rows,
                    cols,
                    patch_h,
                    patch_w,
                    img_h,
                    img_w,
                },
                embeddings: vectors,
            };
            grid.validate()?;
            Ok(EmbeddingRecord::Document(grid))
        }
        KIND_QUERY_VECTOR | KIND_QUERY_TOKENS => {
            if cols != 1 || geometry != [0; 4] {
                return Err(FormatError::parse(16, "query records need cols = 1 and zero geometry"));
            }
            if rows == 0 || (kind == KIND_QUERY_VECTOR && rows != 1) {
                return Err(FormatError::parse(
                    12,
                    format!("bad vector count {rows} for query kind {kind}"),
                ));
            }
            let q = if kind == KIND_QUERY_VECTOR {
                QueryEmbedding::from_vector(id, vectors.into_iter().next().unwrap_or_default())?
            } else {
                QueryEmbedding::from_tokens(id, vectors)?
            };
            Ok(EmbeddingRecord::Query(q))
        }
        other => Err(FormatError::parse(kind_at, format!("unknown record kind {other}"))),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| FormatError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| FormatError::io(path, e))
}

pub fn write_embedding_file(record: &EmbeddingRecord, path: &Path) -> Result<(), FormatError> {
    write_atomic(path, &encode_record(record)?)
}

pub fn read_embedding_file(path: &Path) -> Result<EmbeddingRecord, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode(&bytes)
}

pub fn read_query_file(path: &Path) -> Result<QueryEmbedding, FormatError> {
    match read_embedding_file(path)? {
        EmbeddingRecord::Query(q) => Ok(q),
        EmbeddingRecord::Document(_) => Err(FormatError::Invalid {
            path: path.to_path_buf(),
            reason: "expected a query record, found a document".into(),
        }),
    }
}

/// Lowercase hex, 16 bytes per line, for golden dumps.
pub fn hex_dump(bytes: &[u8]) -> String {
    bytes
        .chunks(16)
        .map(|line| line.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

/// Inverse of [`hex_dump`]; whitespace is ignored.
pub fn parse_hex(text: &str) -> Option<Vec<u8>> {
    let digits: Vec<u8> = text.bytes().filter(|b| !b.is_ascii_whitespace()).collect();
    if !digits.len().is_multiple_of(2) {
        return None;
    }
    digits
        .chunks(2)
        .map(|p| u8::from_str_radix(std::str::from_utf8(p).ok()?, 16).ok())
        .collect()
}

/// One document entry in a corpus manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub doc_id: String,
    /// Path relative to the manifest's directory.
    pub file: String,
    pub rows: u32,
    pub cols: u32,
}

/// JSON index of a corpus directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
    pub dim: usize,
    pub patch_h: u32,
    pub patch_w: u32,
    pub docs: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    /// Builds a manifest for `grids`, whose files live at `files` relative to
    /// the manifest directory. Patch geometry defaults come from the first
    /// document.
    pub fn build(grids: &[(&PatchGrid, String)], created_unix: Option<u64>) -> Result<Self, Error> {
        let (first, _) = grids.first().ok_or(Error::EmptyCorpus)?;
        let mut docs: Vec<ManifestEntry> = grids
            .iter()
            .map(|(g, file)| ManifestEntry {
                doc_id: g.doc_id.clone(),
                file: file.clone(),
                rows: g.geometry.rows,
                cols: g.geometry.cols,
            })
            .collect();
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        Ok(Self {
            format_version: VERSION,
            created_unix,
            dim: first.dim(),
            patch_h: first.geometry.patch_h,
            patch_w: first.geometry.patch_w,
            docs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| FormatError::Invalid {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Loads every document listed in a manifest into a corpus.
pub fn load_corpus(manifest_path: &Path) -> Result<(Manifest, Corpus), FormatError> {
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut corpus = Corpus::new();
    for entry in &manifest.docs {
        let path = base.join(&entry.file);
        let grid = match read_embedding_file(&path)? {
            EmbeddingRecord::Document(g) => g,
            EmbeddingRecord::Query(_) => {
                return Err(FormatError::Invalid {
                    path,
                    reason: "manifest entry points at a query record".into(),
                })
            }
        };
        if grid.doc_id != entry.doc_id {
            return Err(FormatError::Invalid {
                path,
                reason: format!("file holds doc {:?}, manifest says {:?}", grid.doc_id, entry.doc_id),
            });
        }
        corpus.ingest(grid)?;
    }
    Ok((manifest, corpus))
}

/// A region in a result record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    /// `[x1, y1, x2, y2]` in pixels.
    pub bbox: [u32; 4],
    pub peak: f64,
    pub mean: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocRegionsRecord {
    pub doc_id: String,
    pub regions: Vec<RegionRecord>,
}

/// One line of search output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub query_id: String,
    pub ranked: Vec<DocScore>,
    pub regions: Vec<DocRegionsRecord>,
    pub token_report: TokenReport,
}

impl ResultRecord {
    pub fn from_result(query_id: &str, result: &RetrievalResult) -> Self {
        Self {
            query_id: query_id.to_string(),
            ranked: result.ranked_docs.clone(),
            regions: result
                .regions
                .iter()
                .map(|dr| DocRegionsRecord {
                    doc_id: dr.doc_id.clone(),
                    regions: dr
                        .regions
                        .iter()
                        .map(|r| RegionRecord {
                            bbox: [r.bbox.x1, r.bbox.y1, r.bbox.x2, r.bbox.y2],
                            peak: r.peak_score,
                            mean: r.mean_score,
                            size: r.component.len(),
                        })
                        .collect(),
                })
                .collect(),
            token_report: result.token_report.clone(),
        }
    }

    pub fn ranked_ids(&self) -> Vec<&str> {
        self.ranked.iter().map(|d| d.doc_id.as_str()).collect()
    }
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FormatError> {
    let file = fs::File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| FormatError::Invalid {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(out: &mut impl Write, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Gray level of a score: `round(255 * (s + 1) / 2)`, halves rounded up.
pub fn gray_level(score: f64) -> u8 {
    (255.0 * (score + 1.0) / 2.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Plain PGM (P2) text of a saliency map, one pixel per patch. With a mask,
/// masked-out cells are written as 0.
pub fn saliency_pgm(s: &SaliencyMap, mask: Option<&Mask>) -> String {
    let mut out = format!("P2\n{} {}\n255\n", s.cols, s.rows);
    for row in 0..s.rows {
        let line: Vec<String> = (0..s.cols)
            .map(|col| {
                let k = row * s.cols + col;
                match mask {
                    Some(m) if !m.bits[k] => 0,
                    _ => gray_level(s.scores[k]),
                }
                .to_string()
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Path of the masked companion render for `path`.
pub fn masked_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.masked.pgm"))
}

/// Writes the saliency render to `path` and, with a mask, the masked render
/// next to it (see [`masked_path`]).
pub fn render_saliency(s: &SaliencyMap, mask: Option<&Mask>, path: &Path) -> Result<(), FormatError> {
    s.validate()?;
    write_atomic(path, saliency_pgm(s, None).as_bytes())?;
    if let Some(m) = mask {
        if m.bits.len() != s.scores.len() {
            return Err(Error::DimensionMismatch {
                expected: s.scores.len(),
                found: m.bits.len(),
            }
            .into());
        }
        write_atomic(&masked_path(path), saliency_pgm(s, Some(m)).as_bytes())?;
    }
    Ok(())
}
