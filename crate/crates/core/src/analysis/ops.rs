//! Operation and path statistics over groups of architectures.

use std::collections::BTreeMap;

use crate::space::{extract_paths, CellEncoding, OpKind, OpPath, NUM_EDGES, NUM_OPS};

/// Per-op shares and count histograms of a group.
#[derive(Debug, Clone, PartialEq)]
pub struct OpStatistics {
    /// Mean share of each op across the group, percent (sums to 100).
    pub mean_share_percent: [f64; NUM_OPS],
    /// `count_histograms[op][c]` = number of architectures with exactly `c`
    /// edges of that op (c in 0..=6).
    pub count_histograms: [[usize; NUM_EDGES + 1]; NUM_OPS],
}

/// Computes per-op mean percentages and count histograms. Per architecture
/// the share of an op is `count / 6`.
pub fn op_statistics(group: &[CellEncoding]) -> OpStatistics {
    assert!(!group.is_empty(), "op_statistics needs a non-empty group");
    let mut share_sums = [0.0f64; NUM_OPS];
    let mut histograms = [[0usize; NUM_EDGES + 1]; NUM_OPS];
    for enc in group {
        for (op_idx, op) in OpKind::ALL.iter().enumerate() {
            let count = enc.count_op(*op);
            share_sums[op_idx] += count as f64 / NUM_EDGES as f64;
            histograms[op_idx][count] += 1;
        }
    }
    let mut mean_share = [0.0f64; NUM_OPS];
    for op in 0..NUM_OPS {
        mean_share[op] = 100.0 * share_sums[op] / group.len() as f64;
    }
    OpStatistics {
        mean_share_percent: mean_share,
        count_histograms: histograms,
    }
}

/// For each op and count c, the fraction of architectures with that count
/// that are robust; `None` where no architecture has that count.
pub fn robust_share_by_count(
    group: &[(CellEncoding, bool)],
) -> [[Option<f64>; NUM_EDGES + 1]; NUM_OPS] {
    let mut totals = [[0usize; NUM_EDGES + 1]; NUM_OPS];
    let mut robust = [[0usize; NUM_EDGES + 1]; NUM_OPS];
    for (enc, is_robust) in group {
        for (op_idx, op) in OpKind::ALL.iter().enumerate() {
            let count = enc.count_op(*op);
            totals[op_idx][count] += 1;
            if *is_robust {
                robust[op_idx][count] += 1;
            }
        }
    }
    let mut shares = [[None; NUM_EDGES + 1]; NUM_OPS];
    for op in 0..NUM_OPS {
        for c in 0..=NUM_EDGES {
            if totals[op][c] > 0 {
                shares[op][c] = Some(robust[op][c] as f64 / totals[op][c] as f64);
            }
        }
    }
    shares
}

/// Most frequent paths of one length across a group, ranked by count
/// descending with lexicographic tie-break. `top_k` larger than the number
/// of distinct paths returns them all.
pub fn frequent_paths(
    group: &[CellEncoding],
    length: usize,
    top_k: usize,
) -> Vec<(OpPath, usize)> {
    assert!(
        (1..=3).contains(&length),
        "paths have length 1, 2, or 3"
    );
    let mut counts: BTreeMap<OpPath, usize> = BTreeMap::new();
    for enc in group {
        for path in extract_paths(enc) {
            if path.len() == length {
                *counts.entry(path).or_insert(0) += 1;
            }
        }
    }
    // BTreeMap iteration is already lexicographic; sort by count with the
    // map order as the stable tie-break.
    let mut ranked: Vec<(OpPath, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_k);
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::enumerate_space;

    fn enc(codes: [u8; 6]) -> CellEncoding {
        CellEncoding::from_codes(codes).unwrap()
    }

    #[test]
    fn single_architecture_shares() {
        let stats = op_statistics(&[enc([2; 6])]);
        assert_eq!(stats.mean_share_percent[OpKind::Conv3x3 as usize], 100.0);
        assert_eq!(stats.mean_share_percent[OpKind::Skip as usize], 0.0);
        assert_eq!(stats.count_histograms[OpKind::Conv3x3 as usize][6], 1);
    }

    #[test]
    fn exhaustive_space_shares_are_uniform() {
        let all: Vec<CellEncoding> = enumerate_space().collect();
        let stats = op_statistics(&all);
        for op in 0..NUM_OPS {
            assert!(
                (stats.mean_share_percent[op] - 20.0).abs() < 1e-9,
                "op {op}: {}",
                stats.mean_share_percent[op]
            );
        }
        // Shares always sum to 100 per group.
        let total: f64 = stats.mean_share_percent.iter().sum();
        assert!((total - 100.0).abs() < 1e-9);
    }

    #[test]
    fn robust_share_handles_missing_counts() {
        let group = vec![(enc([2; 6]), true), (enc([0; 6]), false)];
        let shares = robust_share_by_count(&group);
        // All-conv cell: share at count 6 for conv3x3 is 1.0.
        assert_eq!(shares[OpKind::Conv3x3 as usize][6], Some(1.0));
        // Nothing has exactly three 3x3 convs.
        assert_eq!(shares[OpKind::Conv3x3 as usize][3], None);
        // Both architectures have zero 1x1 convs; one of two is robust.
        assert_eq!(shares[OpKind::Conv1x1 as usize][0], Some(0.5));
    }

    #[test]
    fn frequent_paths_counts_multiplicity_and_breaks_ties() {
        // The all-conv cell has two length-2 routes, both (2,2).
        let ranked = frequent_paths(&[enc([2; 6])], 2, 10);
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].0 .0, vec![OpKind::Conv3x3, OpKind::Conv3x3]);
        assert_eq!(ranked[0].1, 2);

        // All-zeroize contributes nothing at any length.
        for length in 1..=3 {
            assert!(frequent_paths(&[enc([1; 6])], length, 5).is_empty());
        }

        // Tie between (0,0) and (2,2): lexicographic order wins.
        let group = vec![enc([0, 0, 9 - 9, 1, 0, 1]), enc([2, 2, 0, 1, 2, 1])];
        let mut fixed = group.clone();
        fixed[0] = enc([0, 0, 0, 1, 0, 1]); // routes: 0->1->3 severed? e13=0, e03=1
        let ranked = frequent_paths(&fixed, 2, 10);
        assert!(!ranked.is_empty());
        let counts: Vec<usize> = ranked.iter().map(|r| r.1).collect();
        let mut sorted = counts.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(counts, sorted);
    }

    #[test]
    fn group_counts_equal_per_architecture_path_multisets() {
        // Brute force over a 125-architecture sub-lattice.
        let subset: Vec<CellEncoding> = enumerate_space()
            .filter(|e| {
                e.ops[3] == OpKind::Skip && e.ops[4] == OpKind::Conv3x3 && e.ops[5] == OpKind::AvgPool
            })
            .collect();
        assert_eq!(subset.len(), 125);
        for length in 1..=3 {
            let ranked = frequent_paths(&subset, length, usize::MAX);
            let total: usize = ranked.iter().map(|r| r.1).sum();
            let expected: usize = subset
                .iter()
                .flat_map(extract_paths)
                .filter(|p| p.len() == length)
                .count();
            assert_eq!(total, expected);
        }
    }
}
