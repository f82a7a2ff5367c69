//! Exact cosine scoring and deterministic top-k retrieval.
//!
//! Ranking order is score descending, then row ascending. Scores are
//! computed in `f64` against precomputed row norms, with the same arithmetic
//! as [`cosine`], so a naive score-everything-then-sort reference agrees bit
//! for bit.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{dot_f64, norm_f64, ItemSubset, MIN_NORM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero-norm vector")]
    ZeroNormVector,
    #[error("k = {k} exceeds the {available} available candidates")]
    KTooLarge { k: usize, available: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("query row {row}: {source}")]
    Query {
        row: usize,
        #[source]
        source: Box<RetrievalError>,
    },
}

pub type Result<T> = std::result::Result<T, RetrievalError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub row: usize,
    pub score: f64,
}

impl Hit {
    /// Total ranking order: better hits compare `Less`.
    fn rank_cmp(&self, other: &Hit) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.row.cmp(&other.row))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Corpus row of the query, when the query is a corpus item.
    pub query_row: Option<usize>,
    pub ranked: Vec<Hit>,
}

impl RetrievalResult {
    pub fn k(&self) -> usize {
        self.ranked.len()
    }

    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.ranked.iter().map(|h| h.row)
    }
}

pub(crate) fn cosine_with_norms(u: &[f32], u_norm: f64, v: &[f32], v_norm: f64) -> f64 {
    (dot_f64(u, v) / (u_norm * v_norm)).clamp(-1.0, 1.0)
}

/// Cosine similarity in double precision, clamped to `[-1, 1]`.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(RetrievalError::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (nu, nv) = (norm_f64(u), norm_f64(v));
    if !(nu > MIN_NORM && nv > MIN_NORM) {
        return Err(RetrievalError::ZeroNormVector);
    }
    Ok(cosine_with_norms(u, nu, v, nv))
}

/// Cosine of `query` against every candidate, in candidate order.
pub fn score_all(query: &[f32], candidates: &ItemSubset<'_>) -> Result<Vec<Hit>> {
    let corpus = candidates.corpus();
    if query.len() != corpus.dim() {
        return Err(RetrievalError::DimensionMismatch {
            expected: corpus.dim(),
            actual: query.len(),
        });
    }
    let qn = norm_f64(query);
    if !(qn > MIN_NORM) {
        return Err(RetrievalError::ZeroNormVector);
    }
    Ok(candidates
        .indices()
        .iter()
        .map(|&row| Hit {
            row,
            score: cosine_with_norms(query, qn, corpus.row(row), corpus.norm(row)),
        })
        .collect())
}

/// The `k` candidates most similar to `query`.
pub fn top_k(query: &[f32], candidates: &ItemSubset<'_>, k: usize) -> Result<RetrievalResult> {
    check_k(k, candidates.len())?;
    let mut hits = score_all(query, candidates)?;
    if k < hits.len() {
        hits.select_nth_unstable_by(k - 1, Hit::rank_cmp);
        hits.truncate(k);
    }
    hits.sort_unstable_by(Hit::rank_cmp);
    Ok(RetrievalResult {
        query_row: None,
        ranked: hits,
    })
}

fn check_k(k: usize, available: usize) -> Result<()> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if k > available {
        return Err(RetrievalError::KTooLarge { k, available });
    }
    Ok(())
}

/// `top_k` for every query row, in query order. Runs on the ambient rayon
/// pool; output does not depend on its size.
pub fn batch_retrieve(
    queries: &ItemSubset<'_>,
    candidates: &ItemSubset<'_>,
    k: usize,
) -> Result<Vec<RetrievalResult>> {
    check_k(k, candidates.len())?;
    let corpus = queries.corpus();
    queries
        .indices()
        .par_iter()
        .map(|&row| {
            top_k(corpus.row(row), candidates, k)
                .map(|mut r| {
                    r.query_row = Some(row);
                    r
                })
                .map_err(|e| RetrievalError::Query {
                    row,
                    source: Box::new(e),
                })
        })
        .collect()
}
