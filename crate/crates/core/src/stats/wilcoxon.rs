use serde::{Deserialize, Serialize};

use super::{normal_quantile, normal_two_sided, StatsError};

/// Largest number of non-zero pairs handled by exact enumeration.
pub const EXACT_MAX_PAIRS: usize = 25;

/// Differences closer than this are treated as tied; smaller magnitudes are zero.
/// Yes-rates are ratios of small integers, so float noise sits far below it.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of midranks of positive differences (first minus second).
    pub w_plus: f64,
    pub z: f64,
    pub p: f64,
    /// |z| / sqrt(n_pairs_used).
    pub r_effect: f64,
    pub n_pairs_used: usize,
    pub n_zero_dropped: usize,
    pub method: WilcoxonMethod,
}

/// Midranks of `values` (already non-negative), ties within `TIE_EPS`.
pub(crate) fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] - values[order[i]] <= TIE_EPS {
            j += 1;
        }
        // positions i..j share ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Signed-rank test on `(first, second)` pairs, testing first - second.
///
/// Zero differences are dropped. Up to [`EXACT_MAX_PAIRS`] remaining pairs the
/// null distribution of W+ is enumerated exactly over doubled midranks; beyond
/// that the tie-corrected normal approximation is used without continuity
/// correction. In the exact branch `z` is recovered from the exact p-value.
pub fn paired_wilcoxon(pairs: &[(f64, f64)]) -> Result<WilcoxonResult, StatsError> {
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| d.abs() > TIE_EPS).collect();
    let n_zero_dropped = diffs.len() - nonzero.len();
    if nonzero.is_empty() {
        return Err(StatsError::Degenerate("all paired differences are zero"));
    }
    let n = nonzero.len();
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&nonzero)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let nf = n as f64;
    let mean_w = nf * (nf + 1.0) / 4.0;

    let (z, p, method) = if n <= EXACT_MAX_PAIRS {
        let p = exact_p(&ranks, w_plus);
        let mag = if p >= 1.0 { 0.0 } else { -normal_quantile(p / 2.0) };
        let z = if w_plus >= mean_w { mag } else { -mag };
        (z, p, WilcoxonMethod::Exact)
    } else {
        let var = tie_corrected_variance(&ranks);
        if var <= 0.0 {
            return Err(StatsError::Degenerate("zero variance of W+"));
        }
        let z = (w_plus - mean_w) / var.sqrt();
        (z, normal_two_sided(z), WilcoxonMethod::NormalApprox)
    };
    Ok(WilcoxonResult {
        w_plus,
        z,
        p: p.clamp(f64::MIN_POSITIVE, 1.0),
        r_effect: (z.abs() / nf.sqrt()).min(1.0),
        n_pairs_used: n,
        n_zero_dropped,
        method,
    })
}

/// n(n+1)(2n+1)/24 minus sum(t^3 - t)/48 over tie groups.
fn tie_corrected_variance(ranks: &[f64]) -> f64 {
    let n = ranks.len() as f64;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut correction = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        correction += t * t * t - t;
        i = j;
    }
    n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - correction / 48.0
}

/// Two-sided exact p: twice the smaller tail of the sign-flip distribution.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    // Midranks are multiples of 1/2, so doubled ranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0.0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    let observed = (2.0 * w_plus).round() as usize;
    let all = 2f64.powi(ranks.len() as i32);
    let lower: f64 = counts[..=observed].iter().sum();
    let upper: f64 = counts[observed..].iter().sum();
    (2.0 * lower.min(upper) / all).min(1.0)
}
