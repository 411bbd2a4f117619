//! Rank correlation and distribution summaries.
//!
//! Kendall's tau-b comes in two forms: [`kendall_tau_b`], an O(n log n)
//! merge-sort implementation, and [`kendall_tau_b_quadratic`], the direct
//! pair-counting definition. The two must agree exactly; the quadratic form
//! is the reference the fast one is validated against.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatsError {
    LengthMismatch { x: usize, y: usize },
    TooShort { len: usize },
    EmptyInput,
    NonFiniteValue,
}

impl fmt::Display for StatsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatsError::LengthMismatch { x, y } => {
                write!(f, "input length mismatch: {x} vs {y}")
            }
            StatsError::TooShort { len } => {
                write!(f, "need at least 2 paired observations, got {len}")
            }
            StatsError::EmptyInput => write!(f, "empty input"),
            StatsError::NonFiniteValue => write!(f, "inputs must be finite"),
        }
    }
}

impl std::error::Error for StatsError {}

fn check_pairs(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < 2 {
        return Err(StatsError::TooShort { len: x.len() });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFiniteValue);
    }
    Ok(())
}

fn pairs_in_ties(counts: impl Iterator<Item = usize>) -> u64 {
    counts.map(|t| (t as u64) * (t as u64 - 1) / 2).sum()
}

/// Tie-pair count per equal-value run of a sorted slice.
fn tie_pairs_sorted(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1usize;
    for i in 1..sorted.len() {
        if sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            total += pairs_in_ties(std::iter::once(run));
            run = 1;
        }
    }
    total + pairs_in_ties(std::iter::once(run))
}

/// Kendall tau-b with tie correction, O(n log n).
///
/// Returns `Ok(None)` when the coefficient is undefined because one of the
/// inputs is entirely tied.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<Option<f64>, StatsError> {
    check_pairs(x, y)?;
    let n = x.len();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        x[a].partial_cmp(&x[b])
            .unwrap()
            .then_with(|| y[a].partial_cmp(&y[b]).unwrap())
    });

    // Tie counts among x, and joint (x, y) ties, over the x-sorted order.
    let mut n1 = 0u64; // pairs tied in x
    let mut n3 = 0u64; // pairs tied in both
    {
        let mut x_run = 1usize;
        let mut xy_run = 1usize;
        for i in 1..n {
            let (p, q) = (order[i - 1], order[i]);
            if x[p] == x[q] {
                x_run += 1;
                if y[p] == y[q] {
                    xy_run += 1;
                } else {
                    n3 += pairs_in_ties(std::iter::once(xy_run));
                    xy_run = 1;
                }
            } else {
                n1 += pairs_in_ties(std::iter::once(x_run));
                n3 += pairs_in_ties(std::iter::once(xy_run));
                x_run = 1;
                xy_run = 1;
            }
        }
        n1 += pairs_in_ties(std::iter::once(x_run));
        n3 += pairs_in_ties(std::iter::once(xy_run));
    }

    // Exchange count of the y sequence (in x-order) is the discordant-pair
    // count; a stable merge sort counts it.
    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let swaps = merge_sort_count(&mut ys);

    // ys is now sorted by y; count y ties there.
    let n2 = tie_pairs_sorted(&ys);

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let denom_x = n0 - n1;
    let denom_y = n0 - n2;
    if denom_x == 0 || denom_y == 0 {
        return Ok(None);
    }

    // concordant - discordant = n0 - n1 - n2 + n3 - 2 * swaps
    let p_minus_q = n0 as i128 - n1 as i128 - n2 as i128 + n3 as i128 - 2 * swaps as i128;
    let tau = p_minus_q as f64 / ((denom_x as f64).sqrt() * (denom_y as f64).sqrt());
    Ok(Some(tau))
}

/// Stable merge sort returning the number of (strictly) inverted pairs.
fn merge_sort_count(values: &mut [f64]) -> u64 {
    let n = values.len();
    let mut buf = values.to_vec();
    let mut swaps = 0u64;
    let mut width = 1usize;
    while width < n {
        let mut start = 0usize;
        while start < n {
            let mid = usize::min(start + width, n);
            let end = usize::min(start + 2 * width, n);
            if mid < end {
                swaps += merge_count(&values[start..mid], &values[mid..end], &mut buf[start..end]);
                values[start..end].copy_from_slice(&buf[start..end]);
            }
            start = end;
        }
        width *= 2;
    }
    swaps
}

fn merge_count(left: &[f64], right: &[f64], out: &mut [f64]) -> u64 {
    let (mut i, mut j, mut k) = (0usize, 0usize, 0usize);
    let mut swaps = 0u64;
    while i < left.len() && j < right.len() {
        // Stable: equal elements keep left-first order and count no swap.
        if left[i] <= right[j] {
            out[k] = left[i];
            i += 1;
        } else {
            out[k] = right[j];
            swaps += (left.len() - i) as u64;
            j += 1;
        }
        k += 1;
    }
    while i < left.len() {
        out[k] = left[i];
        i += 1;
        k += 1;
    }
    while j < right.len() {
        out[k] = right[j];
        j += 1;
        k += 1;
    }
    swaps
}

/// Kendall tau-b by direct O(n^2) concordant/discordant/tie counting.
///
/// `tau_b = (P - Q) / sqrt((n0 - n1) (n0 - n2))` with `n1`/`n2` the pair
/// counts tied in x/y respectively.
pub fn kendall_tau_b_quadratic(x: &[f64], y: &[f64]) -> Result<Option<f64>, StatsError> {
    check_pairs(x, y)?;
    let n = x.len();
    let (mut concordant, mut discordant) = (0u64, 0u64);
    let (mut tied_x, mut tied_y) = (0u64, 0u64);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = x[i].partial_cmp(&x[j]).unwrap();
            let dy = y[i].partial_cmp(&y[j]).unwrap();
            match (dx, dy) {
                (Ordering::Equal, Ordering::Equal) => {}
                (Ordering::Equal, _) => tied_x += 1,
                (_, Ordering::Equal) => tied_y += 1,
                (a, b) if a == b => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (n as u64) * (n as u64 - 1) / 2;
    // n1 counts all x-tied pairs including jointly tied ones; recover it.
    let joint: u64 = {
        let mut joint = 0u64;
        for i in 0..n {
            for j in (i + 1)..n {
                if x[i] == x[j] && y[i] == y[j] {
                    joint += 1;
                }
            }
        }
        joint
    };
    let n1 = tied_x + joint;
    let n2 = tied_y + joint;
    if n0 == n1 || n0 == n2 {
        return Ok(None);
    }
    let p_minus_q = concordant as i128 - discordant as i128;
    Ok(Some(
        p_minus_q as f64 / (((n0 - n1) as f64).sqrt() * ((n0 - n2) as f64).sqrt()),
    ))
}

/// Seven-number distribution summary. Quartiles interpolate linearly between
/// closest ranks (the `h = (n-1)p` rule); `std` is the population standard
/// deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Linear-interpolation quantile on sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Summarizes a non-empty sample.
pub fn summarize(values: &[f64]) -> Result<SummaryStats, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFiniteValue);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(SummaryStats {
        mean,
        std: var.sqrt(),
        min: sorted[0],
        q25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn tau_of_identical_rankings_is_one() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau_b(&x, &x).unwrap(), Some(1.0));
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert_eq!(kendall_tau_b(&x, &rev).unwrap(), Some(-1.0));
    }

    #[test]
    fn tau_with_ties_matches_pair_count_oracle() {
        let x = [1.0, 1.0, 2.0, 3.0];
        let y = [1.0, 2.0, 1.0, 3.0];
        let fast = kendall_tau_b(&x, &y).unwrap().unwrap();
        let slow = kendall_tau_b_quadratic(&x, &y).unwrap().unwrap();
        assert!((fast - slow).abs() < 1e-15);
        // 6 pairs: n1 = 1 (pair 0-1), n2 = 1 (pair 0-2), C = 3, D = 1.
        let expected = (3.0 - 1.0) / ((6.0f64 - 1.0).sqrt() * (6.0f64 - 1.0).sqrt());
        assert!((fast - expected).abs() < 1e-15);
    }

    #[test]
    fn tau_undefined_when_one_side_constant() {
        let x = [1.0, 1.0, 1.0];
        let y = [1.0, 2.0, 3.0];
        assert_eq!(kendall_tau_b(&x, &y).unwrap(), None);
        assert_eq!(kendall_tau_b_quadratic(&x, &y).unwrap(), None);
    }

    #[test]
    fn tau_rejects_bad_inputs() {
        assert!(kendall_tau_b(&[1.0], &[1.0]).is_err());
        assert!(kendall_tau_b(&[1.0, 2.0], &[1.0]).is_err());
        assert!(kendall_tau_b(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn fast_tau_agrees_with_oracle_on_random_tied_instances() {
        let mut rng = crate::rng::rng_from_seed(42);
        for _ in 0..300 {
            let n = rng.gen_range(2..=64);
            // Small integer grids force plenty of ties.
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
            let fast = kendall_tau_b(&x, &y).unwrap();
            let slow = kendall_tau_b_quadratic(&x, &y).unwrap();
            match (fast, slow) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12, "{a} vs {b}"),
                (a, b) => assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn summarize_singleton_and_fixture() {
        let s = summarize(&[10.0]).unwrap();
        assert_eq!(
            (s.mean, s.std, s.min, s.q25, s.median, s.q75, s.max),
            (10.0, 0.0, 10.0, 10.0, 10.0, 10.0, 10.0)
        );

        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q25, 1.75);
        assert_eq!(s.q75, 3.25);
        assert_eq!(s.min, 1.0);
        assert_eq!(s.max, 4.0);

        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn summary_quartiles_are_ordered() {
        let mut rng = crate::rng::rng_from_seed(7);
        for _ in 0..50 {
            let n = rng.gen_range(1..40);
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let s = summarize(&v).unwrap();
            assert!(s.min <= s.q25 && s.q25 <= s.median && s.median <= s.q75 && s.q75 <= s.max);
        }
    }
}
