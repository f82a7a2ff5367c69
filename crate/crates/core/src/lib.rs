//! Measures how intrinsic social-group and valence associations inside a
//! vision-language embedding space carry over into zero-shot image-to-text
//! and text-to-image retrieval.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: embedding corpora, their on-disk format and metadata filters.
//! - [`retrieval`]: exact cosine scoring and deterministic top-k.
//! - [`association`]: single-category association effect sizes and the
//!   attribute-set builders.
//! - [`metrics`]: extrinsic scores over retrieval results.
//! - [`stats`]: Spearman correlation with ties, z-scores, mean/std summaries.
//! - [`experiments`]: the propagation pipeline, experiment presets and suites.
//! - [`synth`]: planted-signal fixtures and an independent naive oracle.

// `!(x > min)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod association;
pub mod corpus;
pub mod experiments;
pub mod metrics;
pub mod retrieval;
pub mod stats;
pub mod synth;

pub use association::{AttributeSetPair, EffectSize, PairKind};
pub use corpus::{EmbeddingCorpus, Group, ItemFilter, ItemMeta, ItemSubset, Modality};
pub use experiments::{ExperimentReport, ExperimentSpec, SuiteReport};
pub use retrieval::RetrievalResult;
pub use stats::Correlation;

/// Version string embedded in every report.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
