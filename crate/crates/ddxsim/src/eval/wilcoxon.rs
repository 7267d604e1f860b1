//! Two-sided Wilcoxon signed-rank test for paired scores.
//!
//! Zero differences are dropped and tied absolute differences receive
//! average ranks. For up to 15 nonzero pairs the p-value comes from the
//! exact permutation distribution over all sign assignments; above that a
//! normal approximation with tie correction and continuity correction is
//! used. The two-sided p-value doubles the smaller tail, capped at 1.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::EvalError;

/// Largest n handled by the exact branch under `Auto`.
pub const EXACT_LIMIT: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    /// Exact for n <= 15, normal approximation beyond.
    Auto,
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Pairs remaining after zero differences are dropped.
    pub n: usize,
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Two-sided test with automatic method selection.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, EvalError> {
    wilcoxon_signed_rank_with(a, b, WilcoxonMethod::Auto)
}

pub fn wilcoxon_signed_rank_with(
    a: &[f64],
    b: &[f64],
    method: WilcoxonMethod,
) -> Result<WilcoxonResult, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            predictions: a.len(),
            golds: b.len(),
        });
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n < 5 {
        return Err(EvalError::TooFewNonzeroDifferences { nonzero: n });
    }

    let ranks = average_ranks(&diffs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();

    let use_exact = match method {
        WilcoxonMethod::Auto => n <= EXACT_LIMIT,
        WilcoxonMethod::Exact => true,
        WilcoxonMethod::NormalApprox => false,
    };

    let p_value = if use_exact {
        exact_p(&ranks, w_plus)
    } else {
        approx_p(&ranks, w_plus)
    };

    Ok(WilcoxonResult {
        n,
        w_plus,
        p_value,
        exact: use_exact,
    })
}

/// Average ranks of |diffs| in ascending order; ties share their mean rank.
fn average_ranks(diffs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&i, &j| {
        diffs[i]
            .abs()
            .partial_cmp(&diffs[j].abs())
            .expect("differences are finite")
    });
    let mut ranks = vec![0.0; diffs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // positions i..=j (0-based) share ranks i+1..=j+1
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Enumerate all 2^n sign assignments. Rank sums are multiples of 0.5, so
/// f64 comparisons are exact.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len();
    let total = 1u64 << n;
    let mut count_le = 0u64;
    let mut count_ge = 0u64;
    for mask in 0..total {
        let mut w = 0.0;
        for (i, rank) in ranks.iter().enumerate() {
            if mask & (1 << i) != 0 {
                w += rank;
            }
        }
        if w <= w_plus {
            count_le += 1;
        }
        if w >= w_plus {
            count_ge += 1;
        }
    }
    let tail = count_le.min(count_ge) as f64 / total as f64;
    (2.0 * tail).min(1.0)
}

/// Normal approximation with tie correction and continuity correction.
fn approx_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    // Tie correction: subtract sum(t^3 - t)/48 over tie groups.
    let mut sorted = ranks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let centered = w_plus - mean;
    let correction = 0.5 * centered.signum();
    let z = (centered - correction) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p = 2.0 * (1.0 - normal.cdf(z.abs()));
    p.min(1.0)
}
