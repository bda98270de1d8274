//! Ranking metrics with binary relevance, and relaxed answer matching.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The set of documents relevant to one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryJudgment {
    pub query_id: String,
    pub relevant: BTreeSet<String>,
}

impl QueryJudgment {
    pub fn new<I, S>(query_id: impl Into<String>, relevant: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let relevant: BTreeSet<String> = relevant.into_iter().map(Into::into).collect();
        if relevant.is_empty() {
            return Err(Error::InvalidArgument("judgment has no relevant documents".into()));
        }
        Ok(Self {
            query_id: query_id.into(),
            relevant,
        })
    }
}

fn check_unique<S: AsRef<str>>(ranked: &[S]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ranked.len());
    for id in ranked {
        if !seen.insert(id.as_ref()) {
            return Err(Error::DuplicateDocId(id.as_ref().to_string()));
        }
    }
    Ok(())
}

/// Fraction of relevant documents found in the top `k`.
pub fn recall_at_k<S: AsRef<str>>(ranked: &[S], judgment: &QueryJudgment, k: usize) -> Result<f64> {
    check_unique(ranked)?;
    if judgment.relevant.is_empty() {
        return Err(Error::InvalidArgument("judgment has no relevant documents".into()));
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|id| judgment.relevant.contains(id.as_ref()))
        .count();
    Ok(hits as f64 / judgment.relevant.len() as f64)
}

/// Binary-gain nDCG with the ideal ranking truncated at `k`.
pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], judgment: &QueryJudgment, k: usize) -> Result<f64> {
    check_unique(ranked)?;
    if judgment.relevant.is_empty() {
        return Err(Error::InvalidArgument("judgment has no relevant documents".into()));
    }
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| judgment.relevant.contains(id.as_ref()))
        .map(|(i, _)| discount(i))
        .sum();
    let idcg: f64 = (0..judgment.relevant.len().min(k)).map(discount).sum();
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok((dcg / idcg).min(1.0))
}

/// Numeric answers parse after trimming, stripping a trailing `%` and all
/// `,` thousands separators. The remainder must be an optional sign
/// followed by digits with at most one decimal point.
pub fn parse_numeric(s: &str) -> Option<f64> {
    let t = s.trim();
    let t = t.strip_suffix('%').unwrap_or(t).trim_end();
    let t: String = t.chars().filter(|&c| c != ',').collect();
    let body = t.strip_prefix(['+', '-']).unwrap_or(&t);
    let mut digits = 0;
    let mut dots = 0;
    for c in body.chars() {
        match c {
            '0'..='9' => digits += 1,
            '.' => dots += 1,
            _ => return None,
        }
    }
    if digits == 0 || dots > 1 {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Trim, collapse internal whitespace, lowercase, drop one trailing period.
pub fn normalize_answer(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    match collapsed.strip_suffix('.') {
        Some(stripped) => stripped.trim_end().to_string(),
        None => collapsed,
    }
}

/// Numbers match within 5% of the gold value; everything else must be equal
/// after normalization.
pub fn relaxed_exact_match(pred: &str, gold: &str) -> bool {
    match (parse_numeric(pred), parse_numeric(gold)) {
        (Some(p), Some(g)) => (p - g).abs() <= 0.05 * g.abs(),
        _ => normalize_answer(pred) == normalize_answer(gold),
    }
}
