//! Extrinsic scores over a retrieval: mean retrieved valence and the
//! proportion of retrieved items belonging to a group.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EmbeddingCorpus, Group};
use crate::retrieval::RetrievalResult;
use crate::stats::exact_mean;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("retrieved row {0} has no valence rating")]
    MissingValence(usize),
    #[error("retrieved row {0} has no group label")]
    MissingGroupLabel(usize),
    #[error("retrieval is empty")]
    EmptyRetrieval,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtrinsicKind {
    MeanValence,
    GroupProportion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicScore {
    pub query_row: Option<usize>,
    pub kind: ExtrinsicKind,
    pub value: f64,
    pub k_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
}

/// Arithmetic mean of the ground-truth valence of the retrieved items,
/// independent of ranking order.
pub fn mean_valence(result: &RetrievalResult, corpus: &EmbeddingCorpus) -> Result<ExtrinsicScore> {
    if result.ranked.is_empty() {
        return Err(MetricsError::EmptyRetrieval);
    }
    let valences = result
        .rows()
        .map(|row| {
            corpus
                .item(row)
                .valence
                .ok_or(MetricsError::MissingValence(row))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ExtrinsicScore {
        query_row: result.query_row,
        kind: ExtrinsicKind::MeanValence,
        value: exact_mean(&valences),
        k_used: valences.len(),
        group: None,
    })
}

/// Fraction of retrieved items labelled `target_group`. Every retrieved item
/// must carry a label.
pub fn group_proportion(
    result: &RetrievalResult,
    corpus: &EmbeddingCorpus,
    target_group: Group,
) -> Result<ExtrinsicScore> {
    if result.ranked.is_empty() {
        return Err(MetricsError::EmptyRetrieval);
    }
    let mut hits = 0usize;
    for row in result.rows() {
        let group = corpus
            .item(row)
            .group
            .ok_or(MetricsError::MissingGroupLabel(row))?;
        hits += usize::from(group == target_group);
    }
    Ok(ExtrinsicScore {
        query_row: result.query_row,
        kind: ExtrinsicKind::GroupProportion,
        value: hits as f64 / result.k() as f64,
        k_used: result.k(),
        group: Some(target_group),
    })
}

/// Proportions for all six groups, indexed by [`Group::index`].
pub fn group_proportions(result: &RetrievalResult, corpus: &EmbeddingCorpus) -> Result<[f64; 6]> {
    if result.ranked.is_empty() {
        return Err(MetricsError::EmptyRetrieval);
    }
    let mut counts = [0usize; 6];
    for row in result.rows() {
        let group = corpus
            .item(row)
            .group
            .ok_or(MetricsError::MissingGroupLabel(row))?;
        counts[group.index()] += 1;
    }
    Ok(counts.map(|c| c as f64 / result.k() as f64))
}
