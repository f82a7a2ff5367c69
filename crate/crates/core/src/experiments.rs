//! The propagation pipeline: per-target intrinsic association, top-k
//! retrieval in the requested direction, an extrinsic score over the
//! retrieved items, and a Spearman correlation between the two per stratum.
//!
//! Running an experiment happens in two phases. [`plan`] resolves every
//! selector, template partition and attribute pair against a corpus;
//! [`run_planned`] does the arithmetic. The independent oracle in
//! [`crate::synth`] consumes the same plan.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{self, AssociationError, AttributeSetPair};
use crate::corpus::{self, CorpusError, EmbeddingCorpus, Group, ItemFilter, ItemSubset, Modality};
use crate::metrics::{self, ExtrinsicKind, MetricsError};
use crate::retrieval::{self, RetrievalError};
use crate::stats::{self, Correlation, StatsError, Summary};
use crate::ENGINE_VERSION;

pub const DEFAULT_K: usize = 500;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("{0} selector matched no items")]
    SelectorEmpty(&'static str),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("text item at row {0} has no template_id")]
    MissingTemplate(usize),
    #[error("templates are not aligned: {0}")]
    TemplateMisaligned(String),
    #[error("empty input")]
    EmptyInput,
    #[error("every experiment in the suite failed: {0:?}")]
    AllFailed(Vec<String>),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Association(#[from] AssociationError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<ExperimentError>,
    },
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn with_context<T, E: Into<ExperimentError>>(
    r: std::result::Result<T, E>,
    context: impl FnOnce() -> String,
) -> Result<T> {
    r.map_err(|e| ExperimentError::Context {
        context: context(),
        source: Box::new(e.into()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ImageToText,
    TextToImage,
}

impl Direction {
    pub fn target_modality(self) -> Modality {
        match self {
            Direction::ImageToText => Modality::Image,
            Direction::TextToImage => Modality::Text,
        }
    }

    pub fn retrieval_modality(self) -> Modality {
        self.target_modality().other()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Content {
    Valence,
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AttributeBuilder {
    ValencePoles { n: usize },
    GroupOneVsAll { n_per_group: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplatePolicy {
    AverageOverTemplates,
    SingleTemplate(u8),
    NotApplicable,
}

impl fmt::Display for TemplatePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplatePolicy::AverageOverTemplates => f.write_str("average_over_templates"),
            TemplatePolicy::SingleTemplate(t) => write!(f, "single_template({t})"),
            TemplatePolicy::NotApplicable => f.write_str("not_applicable"),
        }
    }
}

/// Which corpus items are targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSelector {
    pub filter: ItemFilter,
    /// Keep only the `n` highest- and `n` lowest-valence matches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valence_top: Option<usize>,
}

/// Declarative description of one propagation experiment.
///
/// The attribute poles are drawn from the retrieval corpus, which is always
/// the opposite modality to the targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub direction: Direction,
    pub content: Content,
    pub target_selector: TargetSelector,
    pub attribute_builder: AttributeBuilder,
    pub retrieval_corpus_selector: ItemFilter,
    #[serde(default = "default_k")]
    pub k: usize,
    pub extrinsic: ExtrinsicKind,
    pub stratify_by_group: bool,
    pub template_policy: TemplatePolicy,
    #[serde(default)]
    pub seed: u64,
}

fn default_k() -> usize {
    DEFAULT_K
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: &str| Err(ExperimentError::InvalidSpec(format!("{}: {m}", self.name)));
        if self.k == 0 {
            return invalid("k must be positive");
        }
        match (self.content, self.attribute_builder) {
            (Content::Valence, AttributeBuilder::ValencePoles { n }) if n > 0 => {}
            (Content::Group, AttributeBuilder::GroupOneVsAll { n_per_group })
                if n_per_group > 0 => {}
            (Content::Valence, _) => {
                return invalid("valence content needs positive valence_poles")
            }
            (Content::Group, _) => return invalid("group content needs positive group_one_vs_all"),
        }
        if let Some(m) = self.target_selector.filter.modality {
            if m != self.direction.target_modality() {
                return invalid("target modality contradicts direction");
            }
        }
        if let Some(m) = self.retrieval_corpus_selector.modality {
            if m != self.direction.retrieval_modality() {
                return invalid("retrieval modality contradicts direction");
            }
        }
        if self.target_selector.valence_top == Some(0) {
            return invalid("valence_top must be positive");
        }
        if self.extrinsic == ExtrinsicKind::GroupProportion
            && self.content == Content::Valence
            && !self.stratify_by_group
        {
            return invalid("group_proportion with valence content needs stratify_by_group");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            serde_json::from_str(text).map_err(|e| ExperimentError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialises")
    }
}

pub const PRESET_NAMES: [&str; 8] = ["1*-a", "1*-b", "2*-a", "2*-b", "1-a", "1-b", "2-a", "2-b"];

/// Valence pole size used by every preset.
pub const PRESET_VALENCE_POLE: usize = 25;
pub const PRESET_GROUP_SAMPLE: usize = 140;
pub const SMALL_GROUP_SAMPLE: usize = 20;
pub const SMALL_K: usize = 50;

/// One of the eight named experiments; a `/small` suffix selects the
/// reduced-scale variant (`n_per_group = 20`, `k = 50`).
pub fn preset(name: &str) -> Result<ExperimentSpec> {
    let (base, small) = match name.strip_suffix("/small") {
        Some(base) => (base, true),
        None => (name, false),
    };
    let (k, n_group) = if small {
        (SMALL_K, SMALL_GROUP_SAMPLE)
    } else {
        (DEFAULT_K, PRESET_GROUP_SAMPLE)
    };
    let valence = AttributeBuilder::ValencePoles {
        n: PRESET_VALENCE_POLE,
    };
    let group = AttributeBuilder::GroupOneVsAll {
        n_per_group: n_group,
    };
    let rated = |m| ItemFilter::modality(m).with_valence();
    let labelled = |m| ItemFilter::modality(m).with_group();
    use Direction::*;
    use Modality::*;
    let (direction, content, targets, top, builder, pool, extrinsic, stratify) = match base {
        "1*-a" => (
            ImageToText,
            Content::Valence,
            rated(Image),
            Some(PRESET_VALENCE_POLE),
            valence,
            rated(Text),
            ExtrinsicKind::MeanValence,
            false,
        ),
        "1*-b" => (
            TextToImage,
            Content::Valence,
            rated(Text),
            Some(PRESET_VALENCE_POLE),
            valence,
            rated(Image),
            ExtrinsicKind::MeanValence,
            false,
        ),
        "2*-a" => (
            ImageToText,
            Content::Group,
            labelled(Image),
            None,
            group,
            labelled(Text),
            ExtrinsicKind::GroupProportion,
            true,
        ),
        "2*-b" => (
            TextToImage,
            Content::Group,
            labelled(Text),
            None,
            group,
            labelled(Image),
            ExtrinsicKind::GroupProportion,
            true,
        ),
        "1-a" => (
            ImageToText,
            Content::Valence,
            labelled(Image),
            None,
            valence,
            rated(Text),
            ExtrinsicKind::MeanValence,
            true,
        ),
        "1-b" => (
            TextToImage,
            Content::Valence,
            labelled(Text),
            None,
            valence,
            rated(Image),
            ExtrinsicKind::MeanValence,
            true,
        ),
        "2-a" => (
            ImageToText,
            Content::Group,
            rated(Image),
            None,
            group,
            labelled(Text),
            ExtrinsicKind::GroupProportion,
            false,
        ),
        "2-b" => (
            TextToImage,
            Content::Group,
            rated(Text),
            None,
            group,
            labelled(Image),
            ExtrinsicKind::GroupProportion,
            false,
        ),
        _ => return Err(ExperimentError::UnknownPreset(name.to_string())),
    };
    Ok(ExperimentSpec {
        name: name.to_string(),
        direction,
        content,
        target_selector: TargetSelector {
            filter: targets,
            valence_top: top,
        },
        attribute_builder: builder,
        retrieval_corpus_selector: pool,
        k,
        extrinsic,
        stratify_by_group: stratify,
        template_policy: TemplatePolicy::AverageOverTemplates,
        seed: 0,
    })
}

/// Expands `all`, `all-small`, or a single preset name.
pub fn preset_group(name: &str) -> Result<Vec<ExperimentSpec>> {
    match name {
        "all" => PRESET_NAMES.iter().map(|n| preset(n)).collect(),
        "all-small" => PRESET_NAMES
            .iter()
            .map(|n| preset(&format!("{n}/small")))
            .collect(),
        other => Ok(vec![preset(other)?]),
    }
}

/// All corpora of one model, merged into a single embedding space.
#[derive(Debug, Clone)]
pub struct ModelCorpora {
    pub tag: String,
    pub corpus: EmbeddingCorpus,
    /// Content hash of each named input corpus.
    pub fingerprints: BTreeMap<String, String>,
}

impl ModelCorpora {
    pub fn from_named(
        tag: impl Into<String>,
        parts: Vec<(String, EmbeddingCorpus)>,
    ) -> Result<Self> {
        if parts.is_empty() {
            return Err(ExperimentError::EmptyInput);
        }
        let fingerprints = parts
            .iter()
            .map(|(name, c)| (name.clone(), c.fingerprint()))
            .collect();
        let refs: Vec<&EmbeddingCorpus> = parts.iter().map(|(_, c)| c).collect();
        Ok(ModelCorpora {
            tag: tag.into(),
            corpus: EmbeddingCorpus::concat(&refs)?,
            fingerprints,
        })
    }
}

/// What a target's intrinsic score is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// The single valence pole pair.
    Valence,
    /// The one-vs-all pair of the target's own group.
    OwnGroup,
    /// The one-vs-all pair of a fixed group, for every target.
    Group(Group),
}

/// A target: one corpus row per template when targets are sentences,
/// otherwise a single row shared by all templates.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetUnit {
    pub rows: Vec<usize>,
    pub group: Option<Group>,
}

impl TargetUnit {
    pub fn row(&self, template_index: usize) -> usize {
        self.rows[template_index.min(self.rows.len() - 1)]
    }

    pub fn representative(&self) -> usize {
        self.rows[0]
    }
}

/// Attribute pairs available for one retrieval pool.
#[derive(Debug, Clone)]
pub enum PairSet<'a> {
    Valence(AttributeSetPair<'a>),
    /// Indexed by [`Group::index`]; only groups some channel needs are built.
    Groups(Vec<Option<AttributeSetPair<'a>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumDef {
    pub group: Option<Group>,
    pub channel: usize,
    /// Indices into the plan's targets.
    pub members: Vec<usize>,
}

/// A spec resolved against a corpus: targets, pools and attribute pairs per
/// template, with channels and strata fixed.
#[derive(Debug, Clone)]
pub struct ExperimentPlan<'a> {
    pub spec: ExperimentSpec,
    pub corpus: &'a EmbeddingCorpus,
    pub templates: Vec<Option<u8>>,
    pub targets: Vec<TargetUnit>,
    /// One per template when the pool is the text side, otherwise one.
    pub pools: Vec<ItemSubset<'a>>,
    pub pairs: Vec<PairSet<'a>>,
    pub channels: Vec<Channel>,
    pub strata: Vec<StratumDef>,
}

impl<'a> ExperimentPlan<'a> {
    pub fn pool_slot(&self, template_index: usize) -> usize {
        template_index.min(self.pools.len() - 1)
    }

    pub fn pair(
        &self,
        slot: usize,
        channel: Channel,
        target: &TargetUnit,
    ) -> &AttributeSetPair<'a> {
        match (&self.pairs[slot], channel) {
            (PairSet::Valence(p), _) => p,
            (PairSet::Groups(ps), Channel::OwnGroup) => ps
                [target.group.expect("validated").index()]
            .as_ref()
            .expect("planned"),
            (PairSet::Groups(ps), Channel::Group(g)) => ps[g.index()].as_ref().expect("planned"),
            (PairSet::Groups(_), Channel::Valence) => {
                unreachable!("valence channel with group pairs")
            }
        }
    }

    /// Group whose retrieved proportion is the extrinsic score.
    pub fn extrinsic_group(&self, channel: Channel, target: &TargetUnit) -> Option<Group> {
        match channel {
            Channel::Group(g) => Some(g),
            Channel::OwnGroup | Channel::Valence => target.group,
        }
    }
}

fn template_key(t: Option<u8>) -> String {
    t.map_or_else(|| "-".to_string(), |t| t.to_string())
}

/// Resolves `spec` against `corpus`. Every precondition is checked here,
/// before any similarity is computed.
pub fn plan<'a>(spec: &ExperimentSpec, corpus: &'a EmbeddingCorpus) -> Result<ExperimentPlan<'a>> {
    spec.validate()?;
    let target_modality = spec.direction.target_modality();
    let pool_modality = spec.direction.retrieval_modality();
    let text_targets = target_modality == Modality::Text;

    let mut target_filter = spec.target_selector.filter.clone();
    target_filter.modality = Some(target_modality);
    let all_targets = corpus.filter(&target_filter);
    if all_targets.is_empty() {
        return Err(ExperimentError::SelectorEmpty("target"));
    }
    let mut pool_filter = spec.retrieval_corpus_selector.clone();
    pool_filter.modality = Some(pool_modality);
    let all_pool = corpus.filter(&pool_filter);
    if all_pool.is_empty() {
        return Err(ExperimentError::SelectorEmpty("retrieval corpus"));
    }

    let text_side = if text_targets {
        &all_targets
    } else {
        &all_pool
    };
    let templates: Vec<Option<u8>> = match spec.template_policy {
        TemplatePolicy::NotApplicable => vec![None],
        TemplatePolicy::SingleTemplate(t) => vec![Some(t)],
        TemplatePolicy::AverageOverTemplates => {
            let mut ids = Vec::new();
            for item in text_side.items() {
                let t = item
                    .template_id
                    .ok_or(ExperimentError::MissingTemplate(item.row))?;
                if !ids.contains(&t) {
                    ids.push(t);
                }
            }
            ids.sort_unstable();
            ids.into_iter().map(Some).collect()
        }
    };
    let in_template = |subset: &ItemSubset<'a>, t: Option<u8>| match t {
        None => subset.clone(),
        Some(t) => subset.refine(&ItemFilter {
            template_id: Some(t),
            ..Default::default()
        }),
    };

    // targets
    let mut targets: Vec<TargetUnit> = if text_targets {
        let per_template: Vec<ItemSubset<'a>> = templates
            .iter()
            .map(|&t| in_template(&all_targets, t))
            .collect();
        let len = per_template[0].len();
        if len == 0 {
            return Err(ExperimentError::SelectorEmpty("target"));
        }
        for (t, subset) in templates.iter().zip(&per_template) {
            if subset.len() != len {
                return Err(ExperimentError::TemplateMisaligned(format!(
                    "template {} has {} targets, template {} has {}",
                    template_key(templates[0]),
                    len,
                    template_key(*t),
                    subset.len()
                )));
            }
        }
        (0..len)
            .map(|p| {
                let rows: Vec<usize> = per_template.iter().map(|s| s.indices()[p]).collect();
                let first = corpus.item(rows[0]);
                for &r in &rows[1..] {
                    let other = corpus.item(r);
                    if other.valence != first.valence || other.group != first.group {
                        return Err(ExperimentError::TemplateMisaligned(format!(
                            "rows {} and {} sit at the same template position with different labels",
                            rows[0], r
                        )));
                    }
                }
                Ok(TargetUnit {
                    rows,
                    group: first.group,
                })
            })
            .collect::<Result<_>>()?
    } else {
        all_targets
            .indices()
            .iter()
            .map(|&r| TargetUnit {
                rows: vec![r],
                group: corpus.item(r).group,
            })
            .collect()
    };
    if let Some(n) = spec.target_selector.valence_top {
        let representatives =
            ItemSubset::new(corpus, targets.iter().map(|u| u.representative()).collect())?;
        let split = with_context(
            corpus::top_valence_split(corpus, &representatives, n),
            || "selecting most-valenced targets".to_string(),
        )?;
        targets.retain(|u| {
            let r = u.representative();
            split.a.contains(r) || split.b.contains(r)
        });
    }

    // pools
    let pools: Vec<ItemSubset<'a>> = if text_targets {
        vec![all_pool.clone()]
    } else {
        templates
            .iter()
            .map(|&t| in_template(&all_pool, t))
            .collect()
    };
    let pool_templates: Vec<Option<u8>> = if text_targets {
        vec![None]
    } else {
        templates.clone()
    };
    for (pool, &t) in pools.iter().zip(&pool_templates) {
        if pool.is_empty() {
            return Err(ExperimentError::SelectorEmpty("retrieval corpus"));
        }
        if spec.k > pool.len() {
            return with_context(
                Err(RetrievalError::KTooLarge {
                    k: spec.k,
                    available: pool.len(),
                }),
                || format!("retrieval corpus for template {}", template_key(t)),
            );
        }
        for item in pool.items() {
            match spec.extrinsic {
                ExtrinsicKind::MeanValence if item.valence.is_none() => {
                    return Err(MetricsError::MissingValence(item.row).into())
                }
                ExtrinsicKind::GroupProportion if item.group.is_none() => {
                    return Err(MetricsError::MissingGroupLabel(item.row).into())
                }
                _ => {}
            }
        }
    }

    // channels and strata
    if spec.stratify_by_group || spec.content == Content::Group && spec.stratify_by_group {
        if let Some(u) = targets.iter().find(|u| u.group.is_none()) {
            return Err(ExperimentError::InvalidSpec(format!(
                "{}: stratified experiment has unlabelled target row {}",
                spec.name,
                u.representative()
            )));
        }
    }
    let channels: Vec<Channel> = match (spec.content, spec.stratify_by_group) {
        (Content::Valence, _) => vec![Channel::Valence],
        (Content::Group, true) => vec![Channel::OwnGroup],
        (Content::Group, false) => Group::ALL.into_iter().map(Channel::Group).collect(),
    };
    let strata: Vec<StratumDef> = if spec.stratify_by_group {
        Group::ALL
            .into_iter()
            .filter_map(|g| {
                let members: Vec<usize> = (0..targets.len())
                    .filter(|&i| targets[i].group == Some(g))
                    .collect();
                (!members.is_empty()).then_some(StratumDef {
                    group: Some(g),
                    channel: 0,
                    members,
                })
            })
            .collect()
    } else {
        channels
            .iter()
            .enumerate()
            .map(|(c, ch)| StratumDef {
                group: match ch {
                    Channel::Group(g) => Some(*g),
                    _ => None,
                },
                channel: c,
                members: (0..targets.len()).collect(),
            })
            .collect()
    };

    // attribute pairs, drawn from each pool
    let mut needed = [false; 6];
    for ch in &channels {
        match ch {
            Channel::Group(g) => needed[g.index()] = true,
            Channel::OwnGroup => targets
                .iter()
                .filter_map(|u| u.group)
                .for_each(|g| needed[g.index()] = true),
            Channel::Valence => {}
        }
    }
    let mut pairs = Vec::with_capacity(pools.len());
    for (pool, &t) in pools.iter().zip(&pool_templates) {
        let set = match spec.attribute_builder {
            AttributeBuilder::ValencePoles { n } => PairSet::Valence(with_context(
                corpus::top_valence_split(corpus, pool, n),
                || format!("valence poles for template {}", template_key(t)),
            )?),
            AttributeBuilder::GroupOneVsAll { n_per_group } => {
                let mut by_group = vec![None; 6];
                for g in Group::ALL.into_iter().filter(|g| needed[g.index()]) {
                    let seed = derive_seed(spec.seed, g);
                    let pair = with_context(
                        association::build_group_one_vs_all(corpus, pool, g, n_per_group, seed),
                        || format!("{g} attribute sets for template {}", template_key(t)),
                    )?;
                    by_group[g.index()] = Some(pair);
                }
                PairSet::Groups(by_group)
            }
        };
        pairs.push(set);
    }

    Ok(ExperimentPlan {
        spec: spec.clone(),
        corpus,
        templates,
        targets,
        pools,
        pairs,
        channels,
        strata,
    })
}

/// Per-group sampling seed: SplitMix64 finalizer over the experiment seed mixed
/// with the group. Templates share it: aligned pools draw the same
/// positions.
pub fn derive_seed(seed: u64, group: Group) -> u64 {
    let tag = group.index() as u64 + 1;
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelValue {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
    pub intrinsic: f64,
    pub extrinsic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub row: usize,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
    /// Template-averaged values, one per channel.
    pub values: Vec<ChannelValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumResult {
    pub group: Option<Group>,
    pub n: usize,
    pub correlation: Option<Correlation>,
    /// Why the correlation is undefined, when it is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl StratumResult {
    pub fn rho(&self) -> Option<f64> {
        self.correlation.map(|c| c.rho)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupZScore {
    pub group: Group,
    pub n: usize,
    /// Mean of the pooled z-scored intrinsic values of this group's targets.
    pub mean_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub model: String,
    pub seed: u64,
    pub engine_version: String,
    pub corpus_fingerprints: BTreeMap<String, String>,
    pub templates: Vec<Option<u8>>,
    pub strata: Vec<StratumResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub group_zscores: Vec<GroupZScore>,
    pub targets: Vec<TargetRecord>,
}

/// Template-averaged `(intrinsic, extrinsic)` for every target and channel,
/// computed by the engine's public operations.
pub fn evaluate_plan(plan: &ExperimentPlan<'_>) -> Result<Vec<Vec<(f64, f64)>>> {
    let corpus = plan.corpus;
    let spec = &plan.spec;
    plan.targets
        .par_iter()
        .map(|unit| {
            let n_t = plan.templates.len();
            let mut intrinsic = vec![Vec::with_capacity(n_t); plan.channels.len()];
            let mut extrinsic = vec![Vec::with_capacity(n_t); plan.channels.len()];
            for (ti, &template) in plan.templates.iter().enumerate() {
                let row = unit.row(ti);
                let slot = plan.pool_slot(ti);
                let at = || format!("target row {row}, template {}", template_key(template));
                let query = corpus.row(row);
                let mut retrieved =
                    with_context(retrieval::top_k(query, &plan.pools[slot], spec.k), at)?;
                retrieved.query_row = Some(row);
                for (c, &channel) in plan.channels.iter().enumerate() {
                    let es = with_context(
                        association::sc_eat(query, plan.pair(slot, channel, unit)),
                        at,
                    )?;
                    let score = match spec.extrinsic {
                        ExtrinsicKind::MeanValence => metrics::mean_valence(&retrieved, corpus),
                        ExtrinsicKind::GroupProportion => {
                            let g = plan.extrinsic_group(channel, unit).expect("validated");
                            metrics::group_proportion(&retrieved, corpus, g)
                        }
                    };
                    intrinsic[c].push(es.value);
                    extrinsic[c].push(with_context(score, at)?.value);
                }
            }
            Ok(intrinsic
                .iter()
                .zip(&extrinsic)
                .map(|(i, e)| (stats::exact_mean(i), stats::exact_mean(e)))
                .collect())
        })
        .collect()
}

/// Assembles a report from per-target values and a correlation routine.
pub fn assemble_report(
    plan: &ExperimentPlan<'_>,
    model: &ModelCorpora,
    values: Vec<Vec<(f64, f64)>>,
    correlate: impl Fn(&[f64], &[f64]) -> std::result::Result<Correlation, String>,
) -> ExperimentReport {
    let strata = plan
        .strata
        .iter()
        .map(|s| {
            let x: Vec<f64> = s.members.iter().map(|&i| values[i][s.channel].0).collect();
            let y: Vec<f64> = s.members.iter().map(|&i| values[i][s.channel].1).collect();
            let (correlation, note) = match correlate(&x, &y) {
                Ok(c) => (Some(c), None),
                Err(e) => (None, Some(e)),
            };
            StratumResult {
                group: s.group,
                n: s.members.len(),
                correlation,
                note,
            }
        })
        .collect();

    let targets: Vec<TargetRecord> = plan
        .targets
        .iter()
        .zip(&values)
        .map(|(unit, vals)| {
            let row = unit.representative();
            TargetRecord {
                row,
                id: plan.corpus.item(row).id.clone(),
                group: unit.group,
                values: plan
                    .channels
                    .iter()
                    .zip(vals)
                    .map(|(ch, &(intrinsic, extrinsic))| ChannelValue {
                        group: match ch {
                            Channel::Group(g) => Some(*g),
                            _ => None,
                        },
                        intrinsic,
                        extrinsic,
                    })
                    .collect(),
            }
        })
        .collect();

    let group_zscores = if plan.spec.stratify_by_group {
        group_zscores(&targets)
    } else {
        Vec::new()
    };

    ExperimentReport {
        spec: plan.spec.clone(),
        model: model.tag.clone(),
        seed: plan.spec.seed,
        engine_version: ENGINE_VERSION.to_string(),
        corpus_fingerprints: model.fingerprints.clone(),
        templates: plan.templates.clone(),
        strata,
        group_zscores,
        targets,
    }
}

/// Intrinsic values z-scored over all targets of the experiment, then
/// averaged per group.
fn group_zscores(targets: &[TargetRecord]) -> Vec<GroupZScore> {
    let values: Vec<f64> = targets.iter().map(|t| t.values[0].intrinsic).collect();
    let Ok(z) = stats::zscore(&values) else {
        return Vec::new();
    };
    Group::ALL
        .into_iter()
        .filter_map(|g| {
            let zs: Vec<f64> = targets
                .iter()
                .zip(&z)
                .filter(|(t, _)| t.group == Some(g))
                .map(|(_, &v)| v)
                .collect();
            (!zs.is_empty()).then(|| GroupZScore {
                group: g,
                n: zs.len(),
                mean_z: zs.iter().sum::<f64>() / zs.len() as f64,
            })
        })
        .collect()
}

pub fn run_planned(plan: &ExperimentPlan<'_>, model: &ModelCorpora) -> Result<ExperimentReport> {
    let values = evaluate_plan(plan)?;
    Ok(assemble_report(plan, model, values, |x, y| {
        stats::spearman(x, y).map_err(|e| e.to_string())
    }))
}

/// Runs one experiment end to end on one model's corpora.
pub fn run_experiment(spec: &ExperimentSpec, model: &ModelCorpora) -> Result<ExperimentReport> {
    let plan = plan(spec, &model.corpus)?;
    run_planned(&plan, model)
}

/// Intrinsic scores only: one value per target and channel.
pub fn run_intrinsic(spec: &ExperimentSpec, model: &ModelCorpora) -> Result<Vec<TargetRecord>> {
    let plan = plan(spec, &model.corpus)?;
    let corpus = plan.corpus;
    let values: Vec<Vec<f64>> = plan
        .targets
        .par_iter()
        .map(|unit| {
            plan.channels
                .iter()
                .map(|&channel| {
                    let per_template = plan
                        .templates
                        .iter()
                        .enumerate()
                        .map(|(ti, _)| {
                            let row = unit.row(ti);
                            association::sc_eat(
                                corpus.row(row),
                                plan.pair(plan.pool_slot(ti), channel, unit),
                            )
                            .map(|es| es.value)
                        })
                        .collect::<std::result::Result<Vec<f64>, _>>()?;
                    Ok(stats::exact_mean(&per_template))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(plan
        .targets
        .iter()
        .zip(values)
        .map(|(unit, vals)| TargetRecord {
            row: unit.representative(),
            id: corpus.item(unit.representative()).id.clone(),
            group: unit.group,
            values: plan
                .channels
                .iter()
                .zip(vals)
                .map(|(ch, intrinsic)| ChannelValue {
                    group: match ch {
                        Channel::Group(g) => Some(*g),
                        _ => None,
                    },
                    intrinsic,
                    extrinsic: f64::NAN,
                })
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub model: String,
    pub experiment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
    pub n: usize,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteFailure {
    pub model: String,
    pub experiment: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub engine_version: String,
    /// models × experiments × strata, over successful experiments.
    pub scenario_count: usize,
    pub scenarios: Vec<Scenario>,
    /// Mean ± sample std of rho over scenarios where it is defined.
    pub aggregate: Option<Summary>,
    pub failures: Vec<SuiteFailure>,
    pub experiments: Vec<ExperimentReport>,
}

impl SuiteReport {
    pub fn summary_line(&self) -> String {
        match &self.aggregate {
            Some(s) => format!(
                "ρ = {:.2} ± {:.2} over {} of {} scenarios",
                s.mean, s.std, s.n, self.scenario_count
            ),
            None => format!("ρ undefined over {} scenarios", self.scenario_count),
        }
    }
}

/// Runs every spec on every model. Individual failures are collected; the
/// suite fails only when nothing succeeds.
pub fn run_suite(specs: &[ExperimentSpec], models: &[ModelCorpora]) -> Result<SuiteReport> {
    if specs.is_empty() || models.is_empty() {
        return Err(ExperimentError::EmptyInput);
    }
    let mut experiments = Vec::new();
    let mut failures = Vec::new();
    for model in models {
        for spec in specs {
            match run_experiment(spec, model) {
                Ok(report) => experiments.push(report),
                Err(e) => failures.push(SuiteFailure {
                    model: model.tag.clone(),
                    experiment: spec.name.clone(),
                    error: e.to_string(),
                }),
            }
        }
    }
    if experiments.is_empty() {
        return Err(ExperimentError::AllFailed(
            failures
                .iter()
                .map(|f| format!("{}/{}: {}", f.model, f.experiment, f.error))
                .collect(),
        ));
    }
    let scenarios: Vec<Scenario> = experiments
        .iter()
        .flat_map(|r| {
            r.strata.iter().map(|s| Scenario {
                model: r.model.clone(),
                experiment: r.spec.name.clone(),
                group: s.group,
                n: s.n,
                rho: s.rho(),
                p_value: s.correlation.map(|c| c.p_value),
            })
        })
        .collect();
    let rhos: Vec<f64> = scenarios.iter().filter_map(|s| s.rho).collect();
    Ok(SuiteReport {
        engine_version: ENGINE_VERSION.to_string(),
        scenario_count: scenarios.len(),
        aggregate: stats::aggregate(&rhos).ok(),
        scenarios,
        failures,
        experiments,
    })
}

pub const CSV_HEADER: [&str; 7] = [
    "experiment",
    "model",
    "group",
    "template_policy",
    "target_id",
    "intrinsic",
    "extrinsic",
];

fn csv_rows(report: &ExperimentReport, out: &mut Vec<[String; 7]>) {
    for t in &report.targets {
        for v in &t.values {
            let group = v.group.or(if report.spec.stratify_by_group {
                t.group
            } else {
                None
            });
            out.push([
                report.spec.name.clone(),
                report.model.clone(),
                group.map(|g| g.to_string()).unwrap_or_default(),
                report.spec.template_policy.to_string(),
                t.id.clone(),
                v.intrinsic.to_string(),
                v.extrinsic.to_string(),
            ]);
        }
    }
}

fn write_csv(rows: &[[String; 7]]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// One row per target and channel.
    pub fn to_csv(&self) -> String {
        let mut rows = Vec::new();
        csv_rows(self, &mut rows);
        write_csv(&rows)
    }
}

impl SuiteReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn to_csv(&self) -> String {
        let mut rows = Vec::new();
        for r in &self.experiments {
            csv_rows(r, &mut rows);
        }
        write_csv(&rows)
    }
}
