//! Single-category embedding association effect sizes and the two ways of
//! building attribute poles: valence extremes and group one-vs-all.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{norm_f64, EmbeddingCorpus, Group, ItemSubset, MIN_NORM};
use crate::retrieval::cosine_with_norms;

/// Spread at or below this makes an effect size undefined.
pub const MIN_SPREAD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssociationError {
    #[error("attribute set {0} is empty")]
    EmptySet(&'static str),
    #[error("attribute sets overlap at row {0}")]
    Overlap(usize),
    #[error("valence poles must have equal size, got {0} and {1}")]
    UnbalancedPoles(usize, usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero-norm target vector")]
    ZeroNormVector,
    #[error(
        "degenerate {kind:?} attribute pair{}: cosine spread is zero{}",
        group.map(|g| format!(" for {g}")).unwrap_or_default(),
        target_row.map(|r| format!(" at target row {r}")).unwrap_or_default()
    )]
    DegenerateAttributes {
        kind: PairKind,
        group: Option<Group>,
        target_row: Option<usize>,
    },
    #[error("not enough {group} items: need {needed}, have {available}")]
    InsufficientGroupItems {
        group: Group,
        needed: usize,
        available: usize,
    },
}

pub type Result<T> = std::result::Result<T, AssociationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    ValencePoles,
    GroupOneVsAll,
}

/// Two disjoint attribute sets acting as the poles of an association test.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSetPair<'a> {
    pub a: ItemSubset<'a>,
    pub b: ItemSubset<'a>,
    pub kind: PairKind,
    pub group: Option<Group>,
}

impl<'a> AttributeSetPair<'a> {
    pub fn new(
        a: ItemSubset<'a>,
        b: ItemSubset<'a>,
        kind: PairKind,
        group: Option<Group>,
    ) -> Result<Self> {
        if a.is_empty() {
            return Err(AssociationError::EmptySet("A"));
        }
        if b.is_empty() {
            return Err(AssociationError::EmptySet("B"));
        }
        if let Some(&row) = a.indices().iter().find(|&&r| b.contains(r)) {
            return Err(AssociationError::Overlap(row));
        }
        if kind == PairKind::ValencePoles && a.len() != b.len() {
            return Err(AssociationError::UnbalancedPoles(a.len(), b.len()));
        }
        Ok(AttributeSetPair { a, b, kind, group })
    }

    /// The same pair with poles exchanged.
    pub fn swapped(&self) -> Self {
        AttributeSetPair {
            a: self.b.clone(),
            b: self.a.clone(),
            kind: self.kind,
            group: self.group,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub target_row: Option<usize>,
    pub value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

fn sorted_cosines(target: &[f32], target_norm: f64, set: &ItemSubset<'_>) -> Vec<f64> {
    let corpus = set.corpus();
    let mut out: Vec<f64> = set
        .indices()
        .iter()
        .map(|&r| cosine_with_norms(target, target_norm, corpus.row(r), corpus.norm(r)))
        .collect();
    out.sort_unstable_by(f64::total_cmp);
    out
}

fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i].total_cmp(&b[j]).is_le() {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Effect size of `target`'s differential association with the two poles:
/// difference of mean cosines over the sample (n − 1) standard deviation of
/// all cosines to `A ∪ B`.
///
/// Cosines are summed in sorted order, so the result depends only on the
/// multisets of pole cosines. Swapping the poles negates it exactly.
pub fn sc_eat(target: &[f32], pair: &AttributeSetPair<'_>) -> Result<EffectSize> {
    if pair.a.is_empty() {
        return Err(AssociationError::EmptySet("A"));
    }
    if pair.b.is_empty() {
        return Err(AssociationError::EmptySet("B"));
    }
    let dim = pair.a.corpus().dim();
    if target.len() != dim {
        return Err(AssociationError::DimensionMismatch {
            expected: dim,
            actual: target.len(),
        });
    }
    let target_norm = norm_f64(target);
    if !(target_norm > MIN_NORM) {
        return Err(AssociationError::ZeroNormVector);
    }

    let cos_a = sorted_cosines(target, target_norm, &pair.a);
    let cos_b = sorted_cosines(target, target_norm, &pair.b);
    let all = merge_sorted(&cos_a, &cos_b);
    let grand = mean(&all);
    let var = all.iter().map(|c| (c - grand).powi(2)).sum::<f64>() / (all.len() - 1) as f64;
    let std = var.sqrt();
    if !(std > MIN_SPREAD) {
        return Err(AssociationError::DegenerateAttributes {
            kind: pair.kind,
            group: pair.group,
            target_row: None,
        });
    }
    Ok(EffectSize {
        target_row: None,
        value: (mean(&cos_a) - mean(&cos_b)) / std,
        n_a: cos_a.len(),
        n_b: cos_b.len(),
    })
}

/// [`sc_eat`] for each target row, in target order.
pub fn batch_sc_eat(
    targets: &ItemSubset<'_>,
    pair: &AttributeSetPair<'_>,
) -> Result<Vec<EffectSize>> {
    let corpus = targets.corpus();
    targets
        .indices()
        .par_iter()
        .map(|&row| {
            sc_eat(corpus.row(row), pair)
                .map(|es| EffectSize {
                    target_row: Some(row),
                    ..es
                })
                .map_err(|e| match e {
                    AssociationError::DegenerateAttributes { kind, group, .. } => {
                        AssociationError::DegenerateAttributes {
                            kind,
                            group,
                            target_row: Some(row),
                        }
                    }
                    other => other,
                })
        })
        .collect()
}

/// The seeded generator behind every random attribute-set draw.
pub fn sampling_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One-vs-all group poles drawn from `pool`.
///
/// `A` holds `n_per_group` items of `target_group`; `B` holds `n_per_group`
/// items of each of the six groups (the target group included), disjoint
/// from `A`. Draws are without replacement from a `ChaCha8Rng` seeded with
/// `seed`: first `2n` rows of the target group (first half to `A`), then
/// `n` rows per remaining group in [`Group::ALL`] order. Pool items without
/// a group label are ignored.
pub fn build_group_one_vs_all<'a>(
    corpus: &'a EmbeddingCorpus,
    pool: &ItemSubset<'a>,
    target_group: Group,
    n_per_group: usize,
    seed: u64,
) -> Result<AttributeSetPair<'a>> {
    let mut by_group: [Vec<usize>; 6] = Default::default();
    for &row in pool.indices() {
        if let Some(g) = corpus.item(row).group {
            by_group[g.index()].push(row);
        }
    }
    for rows in &mut by_group {
        rows.sort_unstable();
    }
    for g in Group::ALL {
        let needed = if g == target_group {
            2 * n_per_group
        } else {
            n_per_group
        };
        let available = by_group[g.index()].len();
        if available < needed || n_per_group == 0 {
            return Err(AssociationError::InsufficientGroupItems {
                group: g,
                needed: needed.max(1),
                available,
            });
        }
    }

    let mut rng = sampling_rng(seed);
    let own = &by_group[target_group.index()];
    let drawn: Vec<usize> = index::sample(&mut rng, own.len(), 2 * n_per_group)
        .into_iter()
        .map(|i| own[i])
        .collect();
    let a = drawn[..n_per_group].to_vec();
    let mut b = Vec::with_capacity(6 * n_per_group);
    for g in Group::ALL {
        if g == target_group {
            b.extend_from_slice(&drawn[n_per_group..]);
        } else {
            let rows = &by_group[g.index()];
            b.extend(
                index::sample(&mut rng, rows.len(), n_per_group)
                    .into_iter()
                    .map(|i| rows[i]),
            );
        }
    }
    let a = ItemSubset::new(corpus, a).expect("sampled rows are unique");
    let b = ItemSubset::new(corpus, b).expect("sampled rows are unique");
    AttributeSetPair::new(a, b, PairKind::GroupOneVsAll, Some(target_group))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ItemMeta, Modality};
    use proptest::prelude::*;

    fn corpus(rows: &[Vec<f32>]) -> EmbeddingCorpus {
        let dim = rows[0].len();
        let items = (0..rows.len())
            .map(|i| ItemMeta {
                id: format!("r{i}"),
                row: i,
                modality: Modality::Text,
                group: None,
                valence: None,
                template_id: None,
                source: "test".into(),
            })
            .collect();
        EmbeddingCorpus::from_parts(dim, rows.concat(), items).unwrap()
    }

    fn pair<'a>(c: &'a EmbeddingCorpus, a: Vec<usize>, b: Vec<usize>) -> AttributeSetPair<'a> {
        AttributeSetPair::new(
            ItemSubset::new(c, a).unwrap(),
            ItemSubset::new(c, b).unwrap(),
            PairKind::GroupOneVsAll,
            None,
        )
        .unwrap()
    }

    /// Straight-line reimplementation used as the reference for hand cases.
    fn brute_force(w: &[f64], a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let cos = |u: &[f64], v: &[f64]| {
            let d: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
            let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            d / (nu * nv)
        };
        let ca: Vec<f64> = a.iter().map(|x| cos(w, x)).collect();
        let cb: Vec<f64> = b.iter().map(|x| cos(w, x)).collect();
        let all: Vec<f64> = ca.iter().chain(&cb).copied().collect();
        let m = all.iter().sum::<f64>() / all.len() as f64;
        let sd =
            (all.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (all.len() - 1) as f64).sqrt();
        (ca.iter().sum::<f64>() / ca.len() as f64 - cb.iter().sum::<f64>() / cb.len() as f64) / sd
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn hand_case_positive_and_negative() {
        let oracle = brute_force(&[1.0, 0.0], &[vec![1.0, 0.0]], &[vec![0.0, 1.0]]);
        assert!((oracle - 1.41421356).abs() < 1e-8);

        let c = corpus(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let p = pair(&c, vec![0], vec![1]);
        let pos = sc_eat(&[1.0, 0.0], &p).unwrap();
        assert!((pos.value - oracle).abs() < 1e-12);
        assert!((pos.value - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!((pos.n_a, pos.n_b), (1, 1));

        let neg = sc_eat(&[0.0, 1.0], &p).unwrap();
        assert!((neg.value + 1.41421356).abs() < 1e-8);
    }

    #[test]
    fn equal_content_poles_give_zero() {
        let c = corpus(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ]);
        let p = pair(&c, vec![0, 1], vec![3, 2]);
        assert_eq!(sc_eat(&[1.0, 0.0], &p).unwrap().value, 0.0);
    }

    #[test]
    fn degenerate_spread_is_an_error() {
        let c = corpus(&[vec![1.0, 0.0], vec![2.0, 0.0]]);
        let p = pair(&c, vec![0], vec![1]);
        assert!(matches!(
            sc_eat(&[0.0, 1.0], &p),
            Err(AssociationError::DegenerateAttributes { .. })
        ));
        let targets = ItemSubset::new(&c, vec![1]).unwrap();
        assert!(matches!(
            batch_sc_eat(&targets, &p),
            Err(AssociationError::DegenerateAttributes {
                target_row: Some(1),
                ..
            })
        ));
    }

    #[test]
    fn pair_validation() {
        let c = corpus(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let s = |v: Vec<usize>| ItemSubset::new(&c, v).unwrap();
        assert_eq!(
            AttributeSetPair::new(s(vec![]), s(vec![1]), PairKind::GroupOneVsAll, None),
            Err(AssociationError::EmptySet("A"))
        );
        assert_eq!(
            AttributeSetPair::new(s(vec![0, 1]), s(vec![1]), PairKind::GroupOneVsAll, None),
            Err(AssociationError::Overlap(1))
        );
        assert_eq!(
            AttributeSetPair::new(s(vec![0, 2]), s(vec![1]), PairKind::ValencePoles, None),
            Err(AssociationError::UnbalancedPoles(2, 1))
        );
    }

    #[test]
    fn dimension_mismatch() {
        let c = corpus(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let p = pair(&c, vec![0], vec![1]);
        assert!(matches!(
            sc_eat(&[1.0], &p),
            Err(AssociationError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn singleton_batch_equals_single() {
        let c = corpus(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.3, 0.7]]);
        let p = pair(&c, vec![0], vec![1]);
        let t = ItemSubset::new(&c, vec![2]).unwrap();
        let batch = batch_sc_eat(&t, &p).unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(batch[0].value, sc_eat(c.row(2), &p).unwrap().value);
        assert_eq!(batch[0].target_row, Some(2));
    }

    fn grouped_corpus(per_group: &[(Group, usize)]) -> EmbeddingCorpus {
        let mut items = Vec::new();
        let mut matrix = Vec::new();
        for &(g, n) in per_group {
            for i in 0..n {
                let row = items.len();
                items.push(ItemMeta {
                    id: format!("{g}-{i}"),
                    row,
                    modality: Modality::Text,
                    group: Some(g),
                    valence: None,
                    template_id: None,
                    source: "group-labels".into(),
                });
                matrix.extend_from_slice(&[1.0, row as f32]);
            }
        }
        EmbeddingCorpus::from_parts(2, matrix, items).unwrap()
    }

    #[test]
    fn one_vs_all_counts_at_full_scale() {
        let c = grouped_corpus(&Group::ALL.map(|g| (g, 300)));
        let p = build_group_one_vs_all(&c, &c.all(), Group::BlackWomen, 140, 11).unwrap();
        assert_eq!(p.a.len(), 140);
        assert_eq!(p.b.len(), 840);
        assert!(p.a.items().all(|i| i.group == Some(Group::BlackWomen)));
        for g in Group::ALL {
            assert_eq!(p.b.items().filter(|i| i.group == Some(g)).count(), 140);
        }
        assert!(p.a.indices().iter().all(|&r| !p.b.contains(r)));
        assert_eq!(p.group, Some(Group::BlackWomen));
    }

    #[test]
    fn one_vs_all_minimal_case() {
        let c = grouped_corpus(&Group::ALL.map(|g| (g, 2)));
        let p = build_group_one_vs_all(&c, &c.all(), Group::AsianMen, 1, 0).unwrap();
        assert_eq!((p.a.len(), p.b.len()), (1, 6));
    }

    #[test]
    fn one_vs_all_missing_group() {
        let groups: Vec<(Group, usize)> = Group::ALL
            .into_iter()
            .filter(|&g| g != Group::WhiteMen)
            .map(|g| (g, 10))
            .collect();
        let c = grouped_corpus(&groups);
        assert!(matches!(
            build_group_one_vs_all(&c, &c.all(), Group::AsianWomen, 2, 0),
            Err(AssociationError::InsufficientGroupItems {
                group: Group::WhiteMen,
                available: 0,
                ..
            })
        ));
    }

    #[test]
    fn one_vs_all_is_seed_deterministic() {
        let c = grouped_corpus(&Group::ALL.map(|g| (g, 30)));
        let p1 = build_group_one_vs_all(&c, &c.all(), Group::WhiteWomen, 5, 42).unwrap();
        let p2 = build_group_one_vs_all(&c, &c.all(), Group::WhiteWomen, 5, 42).unwrap();
        let p3 = build_group_one_vs_all(&c, &c.all(), Group::WhiteWomen, 5, 43).unwrap();
        assert_eq!(p1, p2);
        assert_ne!(p1, p3);
    }

    /// Coordinates with 16 significant bits, so products with an 8-bit
    /// scalar are exact in `f32`.
    fn coordinate() -> impl Strategy<Value = f32> {
        (-(1i32 << 15)..(1i32 << 15)).prop_map(|k| k as f32 / (1 << 15) as f32)
    }

    fn scalar() -> impl Strategy<Value = f32> {
        (1i32..256, -8i32..8).prop_map(|(m, e)| m as f32 * 2f32.powi(e))
    }

    fn instance() -> impl Strategy<Value = (Vec<f32>, Vec<Vec<f32>>, usize)> {
        (2usize..6, 1usize..8).prop_flat_map(|(dim, n)| {
            (
                proptest::collection::vec(coordinate(), dim),
                proptest::collection::vec(proptest::collection::vec(coordinate(), dim), 2 * n),
                Just(n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn antisymmetry_scale_and_bound(
            (w, rows, n) in instance(),
            scale in scalar(),
            which in any::<prop::sample::Index>(),
        ) {
            prop_assume!(norm_f64(&w) > 1e-3 && rows.iter().all(|r| norm_f64(r) > 1e-3));
            let c = corpus(&rows);
            let p = pair(&c, (0..n).collect(), (n..2 * n).collect());
            let Ok(es) = sc_eat(&w, &p) else { return Ok(()) };
            let rev = sc_eat(&w, &p.swapped()).unwrap();
            prop_assert_eq!(es.value, -rev.value);
            prop_assert!(es.value.abs() <= 2.0);

            let scaled: Vec<f32> = w.iter().map(|x| x * scale).collect();
            let es2 = sc_eat(&scaled, &p).unwrap();
            prop_assert!((es.value - es2.value).abs() <= 1e-12);

            let mut rows2 = rows.clone();
            for x in &mut rows2[which.index(rows.len())] {
                *x *= scale;
            }
            let c2 = corpus(&rows2);
            let p2 = pair(&c2, (0..n).collect(), (n..2 * n).collect());
            let es3 = sc_eat(&w, &p2).unwrap();
            prop_assert!((es.value - es3.value).abs() <= 1e-12);
        }
    }
}
