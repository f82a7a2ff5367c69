//! Synthetic embedding worlds with planted structure, and an independent
//! reference implementation of the experiment arithmetic.
//!
//! Layout of a generated space of dimension `dim >= 8`:
//! dims 0-1 carry valence as a point on a unit arc at angle `v * span`;
//! dims 2-7 carry group identity as the vertices of a regular simplex
//! (pairwise cosine -1/5) scaled by `group_centroid_separation`. Group items can be
//! tilted towards a per-group valence by `coupling`. Gaussian noise of
//! standard deviation `noise_sigma` is added to every coordinate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, EmbeddingCorpus, Group, ItemMeta, Modality};
use crate::experiments::{
    self, Direction, ExperimentError, ExperimentPlan, ExperimentReport, ExperimentSpec,
    ModelCorpora, TargetUnit,
};
use crate::metrics::ExtrinsicKind;
use crate::stats::{exact_mean, Correlation, PValueMethod};

pub const VALENCE_DIMS: std::ops::Range<usize> = 0..2;
pub const GROUP_DIMS: std::ops::Range<usize> = 2..8;
pub const TEMPLATE_COUNT: u8 = 6;
pub const DEFAULT_SPAN: f64 = 1.2;

pub const IMAGES_VALENCE: &str = "images_valence";
pub const TEXTS_VALENCE: &str = "texts_valence";
pub const IMAGES_GROUP: &str = "images_group";
pub const TEXTS_GROUP: &str = "texts_group";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedParams {
    pub dim: usize,
    /// Valence-rated images.
    pub n_images: usize,
    /// Valence-rated sentences per template.
    pub n_texts: usize,
    pub templates: u8,
    /// Face images per group.
    pub group_images: usize,
    /// Group sentences per group and template.
    pub group_texts: usize,
    /// Radians spanned by the valence arc.
    pub valence_angle_span: f64,
    pub group_centroid_separation: f64,
    pub noise_sigma: f64,
    /// Valence each group's items lean towards, by [`Group::index`].
    #[serde(default)]
    pub group_valence: [f64; 6],
    /// Length of the valence lean added to group items.
    #[serde(default)]
    pub coupling: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PlantedParams {
    fn default() -> Self {
        PlantedParams {
            dim: 16,
            n_images: 240,
            n_texts: 240,
            templates: TEMPLATE_COUNT,
            group_images: 40,
            group_texts: 60,
            valence_angle_span: DEFAULT_SPAN,
            group_centroid_separation: 0.6,
            noise_sigma: 0.25,
            group_valence: [0.75, 0.65, 0.3, 0.2, 0.55, 0.45],
            coupling: 0.4,
            seed: 0,
        }
    }
}

impl PlantedParams {
    /// Valence-only world tuned so zero noise gives perfectly monotone
    /// pipelines in `direction`: few targets on a fine retrieval grid.
    pub fn valence_baseline(direction: Direction, noise_sigma: f64, seed: u64) -> Self {
        let (images, texts) = match direction {
            Direction::ImageToText => (60, 2000),
            Direction::TextToImage => (2000, 60),
        };
        PlantedParams {
            n_images: images,
            n_texts: texts,
            group_images: 0,
            group_texts: 0,
            coupling: 0.0,
            noise_sigma,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidParams(m));
        if self.dim < GROUP_DIMS.end {
            return bad(format!("dim must be at least {}", GROUP_DIMS.end));
        }
        if self.templates != 1 && self.templates != TEMPLATE_COUNT {
            return bad(format!("templates must be 1 or {TEMPLATE_COUNT}"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and non-negative".into());
        }
        if !(self.valence_angle_span > 0.0 && self.valence_angle_span < std::f64::consts::FRAC_PI_2)
        {
            return bad("valence_angle_span must be in (0, pi/2)".into());
        }
        if !(self.group_centroid_separation > 0.0 && self.group_centroid_separation.is_finite()) {
            return bad("group_centroid_separation must be positive".into());
        }
        if !self.coupling.is_finite() || self.group_valence.iter().any(|v| !(0.0..=1.0).contains(v))
        {
            return bad("group_valence must lie in [0, 1] and coupling be finite".into());
        }
        Ok(())
    }
}

/// The corpora of one synthetic model, by name, in a fixed order. Parts
/// with no items are left out.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub params: PlantedParams,
    pub parts: Vec<(String, EmbeddingCorpus)>,
}

impl SynthWorld {
    pub fn part(&self, name: &str) -> Option<&EmbeddingCorpus> {
        self.parts.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    pub fn model(&self, tag: &str) -> ModelCorpora {
        ModelCorpora::from_named(tag, self.parts.clone())
            .expect("generated parts share a dimension")
    }
}

/// Evenly spaced valences on `[0, 1]`.
fn valence_grid(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        if n == 1 {
            0.5
        } else {
            i as f64 / (n - 1) as f64
        }
    })
}

/// Rounds to `bits` significant bits so small integer multiples stay exact
/// in `f32`.
fn truncate_mantissa(x: f64, bits: i32) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let e = x.abs().log2().floor() as i32;
    let q = 2f64.powi(e - bits + 1);
    (x / q).round() * q
}

/// Simplex vertex of `group` in the group dims: `(6 e_g - 1) s` with
/// `|vertex| ≈ separation`.
pub fn group_vertex(group: Group, separation: f64) -> [f32; 6] {
    let s = truncate_mantissa(separation / 30f64.sqrt(), 20) as f32;
    let mut v = [-s; 6];
    v[group.index()] = 5.0 * s;
    v
}

struct Generator {
    params: PlantedParams,
    noise: Option<Normal<f64>>,
}

impl Generator {
    fn new(params: &PlantedParams) -> Result<Self, SynthError> {
        params.validate()?;
        let noise = (params.noise_sigma > 0.0)
            .then(|| Normal::new(0.0, params.noise_sigma).expect("validated sigma"));
        Ok(Generator {
            params: params.clone(),
            noise,
        })
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        rng.set_stream(stream);
        rng
    }

    fn arc(&self, valence: f64) -> [f64; 2] {
        let angle = valence * self.params.valence_angle_span;
        [angle.cos(), angle.sin()]
    }

    fn push(&self, out: &mut Vec<f32>, mut base: Vec<f64>, rng: &mut ChaCha8Rng) {
        if let Some(noise) = &self.noise {
            for x in &mut base {
                *x += noise.sample(rng);
            }
        }
        out.extend(base.into_iter().map(|x| x as f32));
    }

    fn valence_vector(&self, valence: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.params.dim];
        v[VALENCE_DIMS].copy_from_slice(&self.arc(valence));
        v
    }

    fn group_vector(&self, group: Group) -> Vec<f64> {
        let mut v = vec![0.0; self.params.dim];
        let vertex = group_vertex(group, self.params.group_centroid_separation);
        for (d, x) in GROUP_DIMS.zip(vertex) {
            v[d] = f64::from(x);
        }
        if self.params.coupling != 0.0 {
            let lean = self.arc(self.params.group_valence[group.index()]);
            for (d, x) in VALENCE_DIMS.zip(lean) {
                v[d] = self.params.coupling * x;
            }
        }
        v
    }

    fn corpus(
        &self,
        matrix: Vec<f32>,
        items: Vec<ItemMeta>,
    ) -> Result<EmbeddingCorpus, SynthError> {
        Ok(EmbeddingCorpus::from_parts(self.params.dim, matrix, items)?)
    }
}

fn meta(id: String, row: usize, modality: Modality, source: &str) -> ItemMeta {
    ItemMeta {
        id,
        row,
        modality,
        group: None,
        valence: None,
        template_id: None,
        source: source.to_string(),
    }
}

/// Valence-rated images and template-major valence-rated sentences.
pub fn generate_valence_corpus(
    params: &PlantedParams,
) -> Result<(EmbeddingCorpus, EmbeddingCorpus), SynthError> {
    let g = Generator::new(params)?;

    let mut rng = g.rng(0);
    let (mut matrix, mut items) = (Vec::new(), Vec::new());
    for (i, v) in valence_grid(params.n_images).enumerate() {
        g.push(&mut matrix, g.valence_vector(v), &mut rng);
        items.push(ItemMeta {
            valence: Some(v),
            ..meta(format!("oasis-{i:05}"), i, Modality::Image, "oasis")
        });
    }
    let images = g.corpus(matrix, items)?;

    let mut rng = g.rng(1);
    let (mut matrix, mut items) = (Vec::new(), Vec::new());
    for t in 0..params.templates {
        for (i, v) in valence_grid(params.n_texts).enumerate() {
            g.push(&mut matrix, g.valence_vector(v), &mut rng);
            let row = items.len();
            items.push(ItemMeta {
                valence: Some(v),
                template_id: Some(t),
                ..meta(format!("nrc-{i:05}-t{t}"), row, Modality::Text, "nrc-vad")
            });
        }
    }
    Ok((images, g.corpus(matrix, items)?))
}

/// Group-labelled face images and template-major group sentences.
pub fn generate_group_corpus(
    params: &PlantedParams,
) -> Result<(EmbeddingCorpus, EmbeddingCorpus), SynthError> {
    let g = Generator::new(params)?;

    let mut rng = g.rng(2);
    let (mut matrix, mut items) = (Vec::new(), Vec::new());
    for group in Group::ALL {
        for i in 0..params.group_images {
            g.push(&mut matrix, g.group_vector(group), &mut rng);
            let row = items.len();
            items.push(ItemMeta {
                group: Some(group),
                ..meta(format!("cfd-{group}-{i:04}"), row, Modality::Image, "cfd")
            });
        }
    }
    let images = g.corpus(matrix, items)?;

    let mut rng = g.rng(3);
    let (mut matrix, mut items) = (Vec::new(), Vec::new());
    for t in 0..params.templates {
        for group in Group::ALL {
            for i in 0..params.group_texts {
                g.push(&mut matrix, g.group_vector(group), &mut rng);
                let row = items.len();
                items.push(ItemMeta {
                    group: Some(group),
                    template_id: Some(t),
                    ..meta(
                        format!("label-{group}-{i:04}-t{t}"),
                        row,
                        Modality::Text,
                        "group-labels",
                    )
                });
            }
        }
    }
    Ok((images, g.corpus(matrix, items)?))
}

pub fn generate_world(params: &PlantedParams) -> Result<SynthWorld, SynthError> {
    params.validate()?;
    let mut parts = Vec::new();
    if params.n_images > 0 && params.n_texts > 0 {
        let (images, texts) = generate_valence_corpus(params)?;
        parts.push((IMAGES_VALENCE.to_string(), images));
        parts.push((TEXTS_VALENCE.to_string(), texts));
    }
    if params.group_images > 0 && params.group_texts > 0 {
        let (images, texts) = generate_group_corpus(params)?;
        parts.push((IMAGES_GROUP.to_string(), images));
        parts.push((TEXTS_GROUP.to_string(), texts));
    }
    if parts.is_empty() {
        return Err(SynthError::InvalidParams("no items requested".into()));
    }
    Ok(SynthWorld {
        params: params.clone(),
        parts,
    })
}

/// Pairwise cosines of the per-group centroids, restricted to the group dims.
pub fn group_centroid_cosines(corpus: &EmbeddingCorpus) -> [[f64; 6]; 6] {
    let mut sums = [[0.0f64; 6]; 6];
    for item in corpus.items() {
        if let Some(g) = item.group {
            let row = corpus.row(item.row);
            for (k, d) in GROUP_DIMS.enumerate() {
                sums[g.index()][k] += f64::from(row[d]);
            }
        }
    }
    let mut out = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            let dot: f64 = (0..6).map(|k| sums[i][k] * sums[j][k]).sum();
            let ni: f64 = sums[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            let nj: f64 = sums[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            out[i][j] = dot / (ni * nj);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Reference arithmetic. Selection and sampling come from the shared plan;
// every similarity, ranking, effect size and correlation below is computed
// from scratch with naive full tables.

fn unit(v: &[f32]) -> Vec<f64> {
    let n = v
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    v.iter().map(|&x| f64::from(x) / n).collect()
}

fn naive_cosine(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        .clamp(-1.0, 1.0)
}

fn naive_sc_eat(t: &[f64], a: &[&[f64]], b: &[&[f64]]) -> f64 {
    let ca: Vec<f64> = a.iter().map(|x| naive_cosine(t, x)).collect();
    let cb: Vec<f64> = b.iter().map(|x| naive_cosine(t, x)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let all: Vec<f64> = ca.iter().chain(&cb).copied().collect();
    let m = mean(&all);
    let sd = (all.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / (all.len() - 1) as f64).sqrt();
    (mean(&ca) - mean(&cb)) / sd
}

/// Best-first order over every scored candidate by full sort.
fn naive_ranking(scores: &[(usize, f64)]) -> Vec<usize> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    sorted.into_iter().map(|(row, _)| row).collect()
}

/// Average ranks by counting, O(n^2).
fn naive_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let below = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn naive_spearman(x: &[f64], y: &[f64]) -> Result<Correlation, String> {
    let n = x.len();
    if n < 3 {
        return Err(format!("too few samples: {n}"));
    }
    let (rx, ry) = (naive_ranks(x), naive_ranks(y));
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err("input is constant".into());
    }
    let rho = sxy / (sxx * syy).sqrt();
    Ok(Correlation {
        rho,
        p_value: f64::NAN,
        n,
        method: PValueMethod::TApproximation,
    })
}

fn naive_target_values(
    plan: &ExperimentPlan<'_>,
    unit_vectors: &[Vec<f64>],
    target: &TargetUnit,
) -> Vec<(f64, f64)> {
    let corpus = plan.corpus;
    let spec = &plan.spec;
    let mut per_channel = vec![(Vec::new(), Vec::new()); plan.channels.len()];
    for ti in 0..plan.templates.len() {
        let row = target.row(ti);
        let slot = plan.pool_slot(ti);
        let t = &unit_vectors[row];
        let scores: Vec<(usize, f64)> = plan.pools[slot]
            .indices()
            .iter()
            .map(|&r| (r, naive_cosine(t, &unit_vectors[r])))
            .collect();
        let top: Vec<usize> = naive_ranking(&scores).into_iter().take(spec.k).collect();
        for (c, &channel) in plan.channels.iter().enumerate() {
            let pair = plan.pair(slot, channel, target);
            let a: Vec<&[f64]> = pair
                .a
                .indices()
                .iter()
                .map(|&r| unit_vectors[r].as_slice())
                .collect();
            let b: Vec<&[f64]> = pair
                .b
                .indices()
                .iter()
                .map(|&r| unit_vectors[r].as_slice())
                .collect();
            let intrinsic = naive_sc_eat(t, &a, &b);
            let extrinsic = match spec.extrinsic {
                ExtrinsicKind::MeanValence => {
                    let v: Vec<f64> = top
                        .iter()
                        .map(|&r| corpus.item(r).valence.unwrap())
                        .collect();
                    exact_mean(&v)
                }
                ExtrinsicKind::GroupProportion => {
                    let g = plan.extrinsic_group(channel, target);
                    top.iter().filter(|&&r| corpus.item(r).group == g).count() as f64
                        / top.len() as f64
                }
            };
            per_channel[c].0.push(intrinsic);
            per_channel[c].1.push(extrinsic);
        }
    }
    per_channel
        .iter()
        .map(|(i, e)| (exact_mean(i), exact_mean(e)))
        .collect()
}

/// Runs `spec` with reference arithmetic. Target, pool and attribute-set
/// selection are shared with the engine; everything else is recomputed.
/// p-values are not computed and reported as NaN.
pub fn oracle_run(
    spec: &ExperimentSpec,
    model: &ModelCorpora,
) -> Result<ExperimentReport, ExperimentError> {
    let plan = experiments::plan(spec, &model.corpus)?;
    let corpus = plan.corpus;
    let unit_vectors: Vec<Vec<f64>> = (0..corpus.count()).map(|r| unit(corpus.row(r))).collect();
    let values: Vec<Vec<(f64, f64)>> = plan
        .targets
        .iter()
        .map(|t| naive_target_values(&plan, &unit_vectors, t))
        .collect();
    Ok(experiments::assemble_report(
        &plan,
        model,
        values,
        naive_spearman,
    ))
}

/// Engine-versus-oracle discrepancies for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDiff {
    pub experiment: String,
    /// Largest |Δrho| over strata; `None` when the reports disagree on
    /// which strata have a defined correlation.
    pub max_rho: Option<f64>,
    pub max_intrinsic: f64,
    pub max_extrinsic: f64,
}

impl OracleDiff {
    pub fn within(&self, tolerance: f64) -> bool {
        self.max_rho.is_some_and(|d| d <= tolerance)
    }
}

pub fn compare_reports(engine: &ExperimentReport, oracle: &ExperimentReport) -> OracleDiff {
    let mut max_rho = (engine.strata.len() == oracle.strata.len()).then_some(0.0f64);
    for (a, b) in engine.strata.iter().zip(&oracle.strata) {
        max_rho = match (max_rho, a.rho(), b.rho()) {
            (Some(m), Some(x), Some(y)) => Some(m.max((x - y).abs())),
            (m, None, None) => m,
            _ => None,
        };
    }
    let (mut max_intrinsic, mut max_extrinsic) = (0.0f64, 0.0f64);
    for (a, b) in engine.targets.iter().zip(&oracle.targets) {
        for (x, y) in a.values.iter().zip(&b.values) {
            max_intrinsic = max_intrinsic.max((x.intrinsic - y.intrinsic).abs());
            max_extrinsic = max_extrinsic.max((x.extrinsic - y.extrinsic).abs());
        }
    }
    if engine.targets.len() != oracle.targets.len() {
        max_rho = None;
    }
    OracleDiff {
        experiment: engine.spec.name.clone(),
        max_rho,
        max_intrinsic,
        max_extrinsic,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ItemFilter;

    fn small() -> PlantedParams {
        PlantedParams {
            n_images: 30,
            n_texts: 40,
            templates: 6,
            group_images: 12,
            group_texts: 10,
            ..Default::default()
        }
    }

    #[test]
    fn layout_and_labels() {
        let w = generate_world(&small()).unwrap();
        let part = |n| w.part(n).unwrap();
        assert_eq!(part(IMAGES_VALENCE).count(), 30);
        assert_eq!(part(TEXTS_VALENCE).count(), 240);
        assert_eq!(part(IMAGES_GROUP).count(), 72);
        assert_eq!(part(TEXTS_GROUP).count(), 360);
        assert!(part(IMAGES_VALENCE)
            .items()
            .iter()
            .all(|i| i.group.is_none() && i.source == "oasis"));
        assert!(part(TEXTS_GROUP)
            .items()
            .iter()
            .all(|i| i.valence.is_none() && i.template_id.is_some()));
        assert_eq!(part(IMAGES_VALENCE).item(0).valence, Some(0.0));
        assert_eq!(part(IMAGES_VALENCE).item(29).valence, Some(1.0));
        let valence_only = generate_world(&PlantedParams {
            group_images: 0,
            ..small()
        })
        .unwrap();
        assert_eq!(valence_only.parts.len(), 2);
        let model = w.model("m");
        let cfd = model.corpus.filter(&ItemFilter {
            source: Some("cfd".into()),
            ..Default::default()
        });
        assert_eq!(cfd.len(), 72);
        assert!(cfd.items().all(|i| i.modality == Modality::Image));
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_world(&small()).unwrap();
        let b = generate_world(&small()).unwrap();
        let prints = |w: &SynthWorld| {
            w.parts
                .iter()
                .map(|(_, c)| c.fingerprint())
                .collect::<Vec<_>>()
        };
        assert_eq!(prints(&a), prints(&b));
        let c = generate_world(&PlantedParams { seed: 1, ..small() }).unwrap();
        let (pa, pc) = (prints(&a), prints(&c));
        assert!(pa.iter().zip(&pc).all(|(x, y)| x != y));
    }

    #[test]
    fn templates_coincide_without_noise() {
        let p = PlantedParams {
            noise_sigma: 0.0,
            ..small()
        };
        let (_, texts) = generate_valence_corpus(&p).unwrap();
        for i in 0..40 {
            assert_eq!(texts.row(i), texts.row(40 + i));
        }
    }

    #[test]
    fn centroids_are_equiangular() {
        for separation in [0.3, 1.0, 2.7] {
            let p = PlantedParams {
                noise_sigma: 0.0,
                group_centroid_separation: separation,
                ..small()
            };
            let (images, texts) = generate_group_corpus(&p).unwrap();
            for c in [images, texts] {
                let gram = group_centroid_cosines(&c);
                for (i, row) in gram.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        let want = if i == j { 1.0 } else { -0.2 };
                        assert!((v - want).abs() < 1e-9, "{i},{j}: {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn vertex_norm_tracks_separation() {
        let v = group_vertex(Group::BlackMen, 2.0);
        let n = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
        assert!((n - 2.0).abs() < 1e-5);
    }

    #[test]
    fn invalid_params_are_rejected() {
        for p in [
            PlantedParams { dim: 7, ..small() },
            PlantedParams {
                templates: 0,
                ..small()
            },
            PlantedParams {
                templates: 2,
                ..small()
            },
            PlantedParams {
                valence_angle_span: 1.6,
                ..small()
            },
            PlantedParams {
                noise_sigma: -1.0,
                ..small()
            },
            PlantedParams {
                group_centroid_separation: 0.0,
                ..small()
            },
        ] {
            assert!(matches!(
                generate_world(&p),
                Err(SynthError::InvalidParams(_))
            ));
        }
    }

    #[test]
    fn naive_ranks_average_ties() {
        assert_eq!(naive_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
