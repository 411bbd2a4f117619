//! Statistical and structural analyses over benchmark tables: rank
//! correlations, distribution summaries, robustness classification,
//! operation/path statistics, and graph-feature correlations.

pub mod graf;
pub mod ops;
pub mod robust;
pub mod stats;

pub use graf::{
    feature_correlations, graf_features, target_value, FeatureCorrelation, GrafConfig,
    GrafFeatureVector, IntermediateDegree, SubsetFeatures, TargetMetric, UNREACHABLE_PATH_LEN,
};
pub use ops::{frequent_paths, op_statistics, robust_share_by_count, OpStatistics};
pub use robust::{
    category_slot, classify_drift_robustness, classify_noise_robustness,
    classify_noise_robustness_fixed, default_drop_from, drift_drop, hwt_categories, hwt_category,
    AnalysisError, DriftBranch, DriftDropFrom, DriftPrefilter, DriftThresholds, HwtCategories,
    HwtCategory, HwtOutcome, RobustnessLabel, RobustnessReport, HIGH_ANALOG_THRESHOLD,
    PUBLISHED_NOISY_DROP_THRESHOLD,
};
pub use stats::{
    kendall_tau_b, kendall_tau_b_quadratic, quantile_sorted, summarize, StatsError, SummaryStats,
};
