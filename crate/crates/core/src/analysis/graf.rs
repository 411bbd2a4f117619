//! Graph-derived architecture features and their correlation with
//! robustness targets.
//!
//! Features are computed per operation subset S: minimum route length using
//! only S-labeled edges, maximum number of S-labeled edges on any route,
//! and node-degree counts restricted to S-labeled edges; plus the global
//! per-op edge counts. Routes through a zeroize edge are severed and never
//! usable, matching path extraction.

use serde::{Deserialize, Serialize};

use super::robust::AnalysisError;
use super::stats::kendall_tau_b;
use crate::bench::{BenchmarkRecord, BenchmarkTable};
use crate::space::{CellEncoding, OpKind, NUM_OPS, ROUTES};

/// Unreachable-route marker for `min_path_len`: max finite length + 1,
/// which preserves ordering when the feature feeds rank correlations.
pub const UNREACHABLE_PATH_LEN: usize = 4;

/// How degrees over the two intermediate nodes aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntermediateDegree {
    Mean,
    Max,
}

/// Feature-extraction configuration: the operation-subset family and the
/// intermediate-node aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrafConfig {
    pub subsets: Vec<Vec<OpKind>>,
    pub intermediate: IntermediateDegree,
}

impl Default for GrafConfig {
    fn default() -> Self {
        let mut subsets: Vec<Vec<OpKind>> = OpKind::ALL.iter().map(|&op| vec![op]).collect();
        // The learnable ops, a conv+skip mix, and everything that passes
        // information.
        subsets.push(vec![OpKind::Conv3x3, OpKind::Conv1x1]);
        subsets.push(vec![OpKind::Skip, OpKind::Conv3x3]);
        subsets.push(vec![
            OpKind::Skip,
            OpKind::Conv3x3,
            OpKind::Conv1x1,
            OpKind::AvgPool,
        ]);
        GrafConfig {
            subsets,
            intermediate: IntermediateDegree::Mean,
        }
    }
}

/// Features of one subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetFeatures {
    pub subset: Vec<OpKind>,
    /// Minimum edge count over unsevered routes whose labels are all in S;
    /// [`UNREACHABLE_PATH_LEN`] when no such route exists.
    pub min_path_len: usize,
    /// Maximum number of S-labeled edges on any single unsevered route.
    pub max_op_on_path: usize,
    /// Number of S-labeled edges leaving the input node.
    pub input_out_degree: usize,
    /// Number of S-labeled edges entering the output node.
    pub output_in_degree: usize,
    /// Aggregated S-labeled degree of the two intermediate nodes.
    pub intermediate_degree: f64,
}

/// The full feature vector of one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrafFeatureVector {
    /// Edge count per op, in code order; sums to 6.
    pub op_counts: [usize; NUM_OPS],
    pub per_subset: Vec<SubsetFeatures>,
}

impl GrafFeatureVector {
    /// Flattens to (name, value) pairs in a stable order.
    pub fn named(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (op_idx, op) in OpKind::ALL.iter().enumerate() {
            out.push((format!("op_count({})", op.name()), self.op_counts[op_idx] as f64));
        }
        for sf in &self.per_subset {
            let tag = subset_tag(&sf.subset);
            out.push((format!("min_path_len({tag})"), sf.min_path_len as f64));
            out.push((format!("max_op_on_path({tag})"), sf.max_op_on_path as f64));
            out.push((format!("input_out_degree({tag})"), sf.input_out_degree as f64));
            out.push((format!("output_in_degree({tag})"), sf.output_in_degree as f64));
            out.push((format!("intermediate_degree({tag})"), sf.intermediate_degree));
        }
        out
    }
}

fn subset_tag(subset: &[OpKind]) -> String {
    let codes: Vec<String> = subset.iter().map(|op| op.code().to_string()).collect();
    codes.join("+")
}

/// Edge index sets touching each node of the fixed DAG.
const INPUT_OUT_EDGES: [usize; 3] = [0, 1, 3];
const OUTPUT_IN_EDGES: [usize; 3] = [3, 4, 5];
const NODE1_EDGES: [usize; 3] = [0, 2, 4];
const NODE2_EDGES: [usize; 3] = [1, 2, 5];

/// Computes the feature vector of one architecture.
pub fn graf_features(enc: &CellEncoding, cfg: &GrafConfig) -> GrafFeatureVector {
    let mut op_counts = [0usize; NUM_OPS];
    for op in &enc.ops {
        op_counts[op.code() as usize] += 1;
    }

    // Unsevered structural routes (no zeroize edge anywhere on the route).
    let live_routes: Vec<&[usize]> = ROUTES
        .iter()
        .copied()
        .filter(|route| route.iter().all(|&e| enc.ops[e] != OpKind::Zeroize))
        .collect();

    let per_subset = cfg
        .subsets
        .iter()
        .map(|subset| {
            let in_s = |edge: usize| subset.contains(&enc.ops[edge]);
            let min_path_len = live_routes
                .iter()
                .filter(|route| route.iter().all(|&e| in_s(e)))
                .map(|route| route.len())
                .min()
                .unwrap_or(UNREACHABLE_PATH_LEN);
            let max_op_on_path = live_routes
                .iter()
                .map(|route| route.iter().filter(|&&e| in_s(e)).count())
                .max()
                .unwrap_or(0);
            let degree = |edges: &[usize; 3]| edges.iter().filter(|&&e| in_s(e)).count();
            let d1 = degree(&NODE1_EDGES) as f64;
            let d2 = degree(&NODE2_EDGES) as f64;
            let intermediate_degree = match cfg.intermediate {
                IntermediateDegree::Mean => (d1 + d2) / 2.0,
                IntermediateDegree::Max => d1.max(d2),
            };
            SubsetFeatures {
                subset: subset.clone(),
                min_path_len,
                max_op_on_path,
                input_out_degree: degree(&INPUT_OUT_EDGES),
                output_in_degree: degree(&OUTPUT_IN_EDGES),
                intermediate_degree,
            }
        })
        .collect();

    GrafFeatureVector {
        op_counts,
        per_subset,
    }
}

/// Correlation target derived from a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetMetric {
    /// `baseline - noisy` (lower is more robust).
    NoisyDrop,
    /// Relative HWT improvement `100 (analog - noisy) / noisy`.
    HwtImprovement,
    /// Noisy-branch drop at the horizon index (0..4), from baseline.
    NoisyDriftDrop(usize),
    /// Analog-branch drop at the horizon index, from analog t0 accuracy.
    AnalogDriftDrop(usize),
}

pub fn target_value(record: &BenchmarkRecord, target: TargetMetric) -> Option<f64> {
    match target {
        TargetMetric::NoisyDrop => Some(record.baseline_acc - record.noisy_acc.mean),
        TargetMetric::HwtImprovement => {
            if record.noisy_acc.mean > 0.0 {
                Some(100.0 * (record.analog_acc.mean - record.noisy_acc.mean) / record.noisy_acc.mean)
            } else {
                None
            }
        }
        TargetMetric::NoisyDriftDrop(h) => {
            Some(record.baseline_acc - record.noisy_drift.get(h)?.mean)
        }
        TargetMetric::AnalogDriftDrop(h) => {
            Some(record.analog_acc.mean - record.analog_drift.get(h)?.mean)
        }
    }
}

/// One ranked feature-correlation entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCorrelation {
    pub feature: String,
    pub tau: f64,
}

/// Kendall tau of every feature against the target, ranked by |tau|
/// descending (ties by name). Features whose tau is undefined (constant
/// over the table) are skipped and listed separately. Records where the
/// target is undefined are dropped from all columns.
pub fn feature_correlations(
    table: &BenchmarkTable,
    cfg: &GrafConfig,
    target: TargetMetric,
    top_k: usize,
) -> Result<(Vec<FeatureCorrelation>, Vec<String>), AnalysisError> {
    let mut rows: Vec<(Vec<(String, f64)>, f64)> = Vec::new();
    for record in table.iter() {
        if let Some(y) = target_value(record, target) {
            let features = graf_features(&record.cell(), cfg).named();
            rows.push((features, y));
        }
    }
    if rows.len() < 10 {
        return Err(AnalysisError::TooFewRecords {
            got: rows.len(),
            need: 10,
        });
    }
    let names: Vec<String> = rows[0].0.iter().map(|(n, _)| n.clone()).collect();
    let targets: Vec<f64> = rows.iter().map(|(_, y)| *y).collect();
    let mut ranked = Vec::new();
    let mut skipped = Vec::new();
    for (col, name) in names.iter().enumerate() {
        let xs: Vec<f64> = rows.iter().map(|(f, _)| f[col].1).collect();
        match kendall_tau_b(&xs, &targets) {
            Ok(Some(tau)) => ranked.push(FeatureCorrelation {
                feature: name.clone(),
                tau,
            }),
            Ok(None) => skipped.push(name.clone()),
            Err(_) => skipped.push(name.clone()),
        }
    }
    ranked.sort_by(|a, b| {
        b.tau
            .abs()
            .partial_cmp(&a.tau.abs())
            .unwrap()
            .then_with(|| a.feature.cmp(&b.feature))
    });
    ranked.truncate(top_k);
    Ok((ranked, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(codes: [u8; NUM_EDGES]) -> CellEncoding {
        CellEncoding::from_codes(codes).unwrap()
    }

    #[test]
    fn all_conv_cell_features() {
        let cfg = GrafConfig::default();
        let features = graf_features(&enc([2; 6]), &cfg);
        assert_eq!(features.op_counts, [0, 0, 6, 0, 0]);
        let conv_only = features
            .per_subset
            .iter()
            .find(|sf| sf.subset == vec![OpKind::Conv3x3])
            .unwrap();
        assert_eq!(conv_only.min_path_len, 1);
        assert_eq!(conv_only.max_op_on_path, 3);
        assert_eq!(conv_only.input_out_degree, 3);
        assert_eq!(conv_only.output_in_degree, 3);
        assert_eq!(conv_only.intermediate_degree, 3.0);
    }

    #[test]
    fn zeroize_subset_is_always_unreachable() {
        let cfg = GrafConfig::default();
        for codes in [[1u8; 6], [1, 1, 1, 1, 1, 0], [0, 1, 2, 1, 3, 4]] {
            let features = graf_features(&enc(codes), &cfg);
            let zero_only = features
                .per_subset
                .iter()
                .find(|sf| sf.subset == vec![OpKind::Zeroize])
                .unwrap();
            assert_eq!(zero_only.min_path_len, UNREACHABLE_PATH_LEN);
            assert_eq!(zero_only.max_op_on_path, 0);
        }
    }

    #[test]
    fn all_skip_cell_maximal_skip_degrees() {
        let cfg = GrafConfig::default();
        let features = graf_features(&enc([0; 6]), &cfg);
        let skip_only = features
            .per_subset
            .iter()
            .find(|sf| sf.subset == vec![OpKind::Skip])
            .unwrap();
        assert_eq!(skip_only.min_path_len, 1);
        assert_eq!(skip_only.input_out_degree, 3);
        assert_eq!(skip_only.output_in_degree, 3);
        assert_eq!(skip_only.intermediate_degree, 3.0);
    }

    #[test]
    fn full_subset_min_path_depends_on_direct_edge() {
        let cfg = GrafConfig::default();
        let all_ops = vec![
            OpKind::Skip,
            OpKind::Conv3x3,
            OpKind::Conv1x1,
            OpKind::AvgPool,
        ];
        // Non-zeroize direct edge: min path length 1.
        let f = graf_features(&enc([0, 0, 0, 2, 0, 0]), &cfg);
        let sf = f.per_subset.iter().find(|sf| sf.subset == all_ops).unwrap();
        assert_eq!(sf.min_path_len, 1);
        // Zeroize on the direct edge only: shortest usable route is 2 edges.
        let f = graf_features(&enc([0, 0, 0, 1, 0, 0]), &cfg);
        let sf = f.per_subset.iter().find(|sf| sf.subset == all_ops).unwrap();
        assert_eq!(sf.min_path_len, 2);
    }

    #[test]
    fn correlations_rank_a_predictive_feature_first() {
        use super::super::robust::tests::{record, table_of};
        use crate::rng::rng_from_seed;
        use rand::Rng;

        // Build a table where the noisy drop is driven by the conv3x3
        // count plus small noise: op_count(conv3x3) must rank on top.
        let mut rng = rng_from_seed(33);
        let mut records = Vec::new();
        for index in 0..60u32 {
            let cell = CellEncoding::from_index(crate::space::ArchIndex(index * 37)).unwrap();
            let conv_count = cell.count_op(OpKind::Conv3x3) as f64;
            let drop = 5.0 * conv_count + rng.gen_range(-0.5..0.5);
            let baseline = 95.0;
            records.push(record(
                index * 37,
                baseline,
                baseline - drop,
                90.0,
                [80.0; 4],
                [88.0; 4],
            ));
        }
        let table = table_of(records);
        let (ranked, _skipped) =
            feature_correlations(&table, &GrafConfig::default(), TargetMetric::NoisyDrop, 3)
                .unwrap();
        assert!(
            ranked
                .iter()
                .any(|fc| fc.feature == "op_count(nor_conv_3x3)"),
            "top 3: {ranked:?}"
        );
        assert!(ranked[0].tau.abs() > 0.5);
    }

    #[test]
    fn constant_feature_is_skipped() {
        use super::super::robust::tests::{record, table_of};
        let records: Vec<_> = (0..12u32)
            .map(|i| record(i, 90.0, 80.0 - i as f64, 85.0, [70.0; 4], [80.0; 4]))
            .collect();
        let table = table_of(records);
        let (_ranked, skipped) =
            feature_correlations(&table, &GrafConfig::default(), TargetMetric::NoisyDrop, 100)
                .unwrap();
        // Indices 0..12 share several structural features (e.g. everything
        // about ops that never appear); at least one column is constant.
        assert!(!skipped.is_empty());
    }

    #[test]
    fn too_few_records_is_an_error() {
        use super::super::robust::tests::{record, table_of};
        let table = table_of(vec![record(0, 90.0, 80.0, 85.0, [70.0; 4], [80.0; 4])]);
        assert!(matches!(
            feature_correlations(&table, &GrafConfig::default(), TargetMetric::NoisyDrop, 5),
            Err(AnalysisError::TooFewRecords { .. })
        ));
    }
}
