//! Spearman rank correlation with tie handling, z-scores and mean ± std
//! summaries.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

/// Largest sample size whose p-value is computed by full permutation.
pub const EXACT_PERMUTATION_MAX_N: usize = 9;

const DEGENERATE_SPREAD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("too few samples: need {needed}, have {available}")]
    TooFewSamples { needed: usize, available: usize },
    #[error("input is constant")]
    ConstantInput,
    #[error("standard deviation is zero")]
    DegenerateSpread,
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite input value")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, StatsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    ExactPermutation,
    TApproximation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: PValueMethod,
}

/// Average (fractional) ranks, 1-based.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end share ranks start+1 ..= end
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Twice-centred ranks `2r - (n + 1)`; integral even with half ranks, so
/// every sum below is exact.
fn doubled_deviations(ranks: &[f64]) -> Vec<f64> {
    let shift = (ranks.len() + 1) as f64;
    ranks.iter().map(|r| 2.0 * r - shift).collect()
}

fn deviation_correlation(dx: &[f64], dy: &[f64]) -> f64 {
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in dx.iter().zip(dy) {
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman's rho with a two-sided p-value.
///
/// p-values come from exhaustive permutation of the second rank vector for
/// `n <= 9` and from Student's t with `n - 2` degrees of freedom otherwise.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFewSamples {
            needed: 3,
            available: n,
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    if is_constant(x) || is_constant(y) {
        return Err(StatsError::ConstantInput);
    }
    let rx = doubled_deviations(&fractional_ranks(x));
    let ry = doubled_deviations(&fractional_ranks(y));
    let rho = deviation_correlation(&rx, &ry);
    let (p_value, method) = if n <= EXACT_PERMUTATION_MAX_N {
        (permutation_p(&rx, &ry, rho), PValueMethod::ExactPermutation)
    } else {
        (t_approximation_p(rho, n), PValueMethod::TApproximation)
    };
    Ok(Correlation {
        rho,
        p_value,
        n,
        method,
    })
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&a| a == v[0])
}

/// Two-sided p-value from the t statistic `rho * sqrt((n-2)/(1-rho^2))`.
pub fn t_approximation_p(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = rho.abs() * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t)).clamp(0.0, 1.0)
}

fn permutation_p(rx: &[f64], ry: &[f64], observed: f64) -> f64 {
    // slack for rounding between permutations that tie the observed |rho|
    let threshold = observed.abs() - 1e-12;
    let mut perm: Vec<f64> = ry.to_vec();
    let mut extreme = 0u64;
    let mut total = 0u64;
    heap_permutations(&mut perm, &mut |p| {
        total += 1;
        if deviation_correlation(rx, p).abs() >= threshold {
            extreme += 1;
        }
    });
    extreme as f64 / total as f64
}

/// Heap's algorithm, non-recursive.
fn heap_permutations(v: &mut [f64], visit: &mut impl FnMut(&[f64])) {
    let n = v.len();
    let mut c = vec![0usize; n];
    visit(v);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                v.swap(0, i);
            } else {
                v.swap(c[i], i);
            }
            visit(v);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Correctly rounded sum (Shewchuk's exact partials). The result depends
/// only on the multiset of inputs.
pub fn exact_sum(values: &[f64]) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for &v in values {
        let mut x = v;
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Mean from the exact sum, so equal multisets and equal exact sums give
/// equal results, and a constant input is returned unchanged.
pub fn exact_mean(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let s = exact_sum(values);
    let mut with_residual = values.to_vec();
    with_residual.push(-s);
    let r = exact_sum(&with_residual);
    let q = s / n;
    let e = (-q).mul_add(n, s);
    q + (e + r) / n
}

fn sample_mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `(v - mean) / sample_std` elementwise.
pub fn zscore(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(StatsError::TooFewSamples {
            needed: 2,
            available: values.len(),
        });
    }
    let (mean, std) = sample_mean_std(values);
    if !(std > DEGENERATE_SPREAD) {
        return Err(StatsError::DegenerateSpread);
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero when `n == 1`.
    pub std: f64,
    pub n: usize,
    pub single_sample: bool,
}

/// Arithmetic mean and sample standard deviation.
pub fn aggregate(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let (mean, std) = sample_mean_std(values);
    Ok(Summary {
        mean,
        std,
        n: values.len(),
        single_sample: values.len() == 1,
    })
}
