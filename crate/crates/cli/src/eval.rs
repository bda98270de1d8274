use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use regionret_core::format::{self, ResultRecord};
use regionret_core::{ndcg_at_k, recall_at_k, QueryJudgment};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const CUTOFFS: [usize; 4] = [1, 2, 5, 10];

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Search output (JSON lines).
    #[arg(long)]
    results: PathBuf,

    /// Relevance judgments (JSON lines of `{"query_id", "relevant"}`).
    #[arg(long)]
    judgments: PathBuf,

    /// Include one entry per evaluated query.
    #[arg(long)]
    per_query: bool,

    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct AtK {
    k: usize,
    recall: f64,
    ndcg: f64,
}

#[derive(Debug, Serialize)]
struct QueryScores {
    query_id: String,
    metrics: Vec<AtK>,
}

#[derive(Debug, Serialize)]
struct Summary {
    evaluated: usize,
    missing_judgments: Vec<String>,
    metrics: Vec<AtK>,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_query: Option<Vec<QueryScores>>,
}

fn load_judgments(path: &std::path::Path) -> CliResult<BTreeMap<String, QueryJudgment>> {
    let list: Vec<QueryJudgment> = format::read_jsonl(path)?;
    if list.is_empty() {
        return Err(CliError::Invalid(format!("{}: no judgments", path.display())));
    }
    let mut map = BTreeMap::new();
    for j in list {
        if j.relevant.is_empty() {
            return Err(CliError::Invalid(format!(
                "judgment for {} lists no relevant documents",
                j.query_id
            )));
        }
        let id = j.query_id.clone();
        if map.insert(id.clone(), j).is_some() {
            return Err(CliError::Invalid(format!("duplicate judgment for {id}")));
        }
    }
    Ok(map)
}

pub fn run(args: Args) -> CliResult<()> {
    let judgments = load_judgments(&args.judgments)?;
    let results: Vec<ResultRecord> = format::read_jsonl(&args.results)?;

    let mut seen = HashSet::new();
    let mut missing = Vec::new();
    let mut per_query = Vec::new();
    for r in &results {
        if !seen.insert(r.query_id.as_str()) {
            return Err(CliError::Invalid(format!("duplicate result for {}", r.query_id)));
        }
        let Some(j) = judgments.get(&r.query_id) else {
            eprintln!("warning: no judgment for {}, excluded", r.query_id);
            missing.push(r.query_id.clone());
            continue;
        };
        let ranked = r.ranked_ids();
        let metrics = CUTOFFS
            .iter()
            .map(|&k| {
                Ok(AtK {
                    k,
                    recall: recall_at_k(&ranked, j, k)?,
                    ndcg: ndcg_at_k(&ranked, j, k)?,
                })
            })
            .collect::<regionret_core::Result<Vec<_>>>()
            .map_err(|e| CliError::from(e).context(format!("query {}", r.query_id)))?;
        per_query.push(QueryScores {
            query_id: r.query_id.clone(),
            metrics,
        });
    }
    if per_query.is_empty() {
        return Err(CliError::Invalid("no result has a judgment".into()));
    }

    let n = per_query.len() as f64;
    let metrics = CUTOFFS
        .iter()
        .enumerate()
        .map(|(i, &k)| AtK {
            k,
            recall: per_query.iter().map(|q| q.metrics[i].recall).sum::<f64>() / n,
            ndcg: per_query.iter().map(|q| q.metrics[i].ndcg).sum::<f64>() / n,
        })
        .collect();
    let summary = Summary {
        evaluated: per_query.len(),
        missing_judgments: missing,
        metrics,
        per_query: args.per_query.then_some(per_query),
    };
    let mut text = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    text.push(b'\n');
    crate::emit(args.output.as_deref(), &text)
}
