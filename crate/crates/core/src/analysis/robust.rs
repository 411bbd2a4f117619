//! Robustness classification rules: noise robustness by quantile threshold,
//! drift robustness by fixed per-horizon thresholds, and the three
//! hardware-aware-training categories.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::stats::{quantile_sorted, summarize, SummaryStats};
use crate::bench::{BenchmarkRecord, BenchmarkTable};

#[derive(Debug, Clone, PartialEq)]
pub enum AnalysisError {
    EmptyTable,
    /// Nothing survived the pre-filter; thresholds would be undefined.
    EmptyFilteredSet { filter: String },
    TooFewRecords { got: usize, need: usize },
    InvalidParameter(String),
}

impl fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalysisError::EmptyTable => write!(f, "benchmark table is empty"),
            AnalysisError::EmptyFilteredSet { filter } => {
                write!(f, "no records pass the pre-filter ({filter})")
            }
            AnalysisError::TooFewRecords { got, need } => {
                write!(f, "need at least {need} records, got {got}")
            }
            AnalysisError::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
        }
    }
}

impl std::error::Error for AnalysisError {}

/// Classification outcome for one architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RobustnessLabel {
    Robust,
    NonRobust,
    /// Failed the pre-filter; not part of the threshold distribution.
    Excluded,
}

/// Labels plus the criterion that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub labels: BTreeMap<u32, RobustnessLabel>,
    pub threshold: f64,
    /// Human-readable criterion (metric, threshold, filters).
    pub criterion: String,
}

/// Noise robustness: pre-filter to records with baseline accuracy above
/// `baseline_min` (percent), compute `noisy drop = baseline - noisy mean`,
/// set the threshold at the configured quantile of the drop distribution,
/// and label `drop <= threshold` as robust.
pub fn classify_noise_robustness(
    table: &BenchmarkTable,
    baseline_min: f64,
    quantile: f64,
) -> Result<RobustnessReport, AnalysisError> {
    if table.is_empty() {
        return Err(AnalysisError::EmptyTable);
    }
    if !(0.0..=1.0).contains(&quantile) {
        return Err(AnalysisError::InvalidParameter(format!(
            "quantile {quantile} outside [0, 1]"
        )));
    }
    let mut drops: Vec<(u32, f64)> = Vec::new();
    let mut labels = BTreeMap::new();
    for record in table.iter() {
        if record.baseline_acc > baseline_min {
            drops.push((record.arch_index, record.baseline_acc - record.noisy_acc.mean));
        } else {
            labels.insert(record.arch_index, RobustnessLabel::Excluded);
        }
    }
    if drops.is_empty() {
        return Err(AnalysisError::EmptyFilteredSet {
            filter: format!("baseline_acc > {baseline_min}"),
        });
    }
    let mut sorted: Vec<f64> = drops.iter().map(|&(_, d)| d).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let threshold = quantile_sorted(&sorted, quantile);
    for (index, drop) in drops {
        let label = if drop <= threshold {
            RobustnessLabel::Robust
        } else {
            RobustnessLabel::NonRobust
        };
        labels.insert(index, label);
    }
    Ok(RobustnessReport {
        labels,
        threshold,
        criterion: format!(
            "noisy_drop <= q{quantile}(drops) = {threshold:.4} over baseline_acc > {baseline_min}"
        ),
    })
}

/// Fixed robust override threshold reported at full scale (percent drop).
pub const PUBLISHED_NOISY_DROP_THRESHOLD: f64 = 12.75;

/// Classification with an explicit threshold instead of the quantile rule.
pub fn classify_noise_robustness_fixed(
    table: &BenchmarkTable,
    baseline_min: f64,
    threshold: f64,
) -> Result<RobustnessReport, AnalysisError> {
    if table.is_empty() {
        return Err(AnalysisError::EmptyTable);
    }
    let mut labels = BTreeMap::new();
    let mut any = false;
    for record in table.iter() {
        let label = if record.baseline_acc > baseline_min {
            any = true;
            if record.baseline_acc - record.noisy_acc.mean <= threshold {
                RobustnessLabel::Robust
            } else {
                RobustnessLabel::NonRobust
            }
        } else {
            RobustnessLabel::Excluded
        };
        labels.insert(record.arch_index, label);
    }
    if !any {
        return Err(AnalysisError::EmptyFilteredSet {
            filter: format!("baseline_acc > {baseline_min}"),
        });
    }
    Ok(RobustnessReport {
        labels,
        threshold,
        criterion: format!(
            "noisy_drop <= {threshold} (fixed) over baseline_acc > {baseline_min}"
        ),
    })
}

/// Which drift series a classification reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriftBranch {
    /// Digital-trained weights on the crossbar.
    Noisy,
    /// Hardware-aware-trained weights on the crossbar.
    Analog,
}

/// Reference the per-horizon drop is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriftDropFrom {
    /// Full-precision digital baseline accuracy.
    Baseline,
    /// The branch's own undrifted (t0) accuracy.
    BranchT0,
}

/// Per-horizon accuracy-drop thresholds (percentage points).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftThresholds {
    pub noisy: [f64; 4],
    pub analog: [f64; 4],
}

impl Default for DriftThresholds {
    fn default() -> Self {
        DriftThresholds {
            noisy: [5.0, 10.0, 16.0, 25.0],
            analog: [2.5, 3.5, 4.5, 7.0],
        }
    }
}

impl DriftThresholds {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        for series in [&self.noisy, &self.analog] {
            if series.iter().any(|&t| t <= 0.0) {
                return Err(AnalysisError::InvalidParameter(
                    "drift thresholds must be positive".into(),
                ));
            }
            if !series.windows(2).all(|w| w[0] <= w[1]) {
                return Err(AnalysisError::InvalidParameter(
                    "drift thresholds must be non-decreasing with horizon".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn for_branch(&self, branch: DriftBranch) -> [f64; 4] {
        match branch {
            DriftBranch::Noisy => self.noisy,
            DriftBranch::Analog => self.analog,
        }
    }
}

/// Pre-filter for drift classification: architectures that work digitally
/// and resist static noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftPrefilter {
    pub baseline_min: f64,
    pub noisy_min: f64,
}

impl Default for DriftPrefilter {
    fn default() -> Self {
        DriftPrefilter {
            baseline_min: 80.0,
            noisy_min: 70.0,
        }
    }
}

/// Drop of one record at one horizon under the branch's drop definition.
pub fn drift_drop(
    record: &BenchmarkRecord,
    branch: DriftBranch,
    from: DriftDropFrom,
    horizon: usize,
) -> f64 {
    let series = match branch {
        DriftBranch::Noisy => &record.noisy_drift,
        DriftBranch::Analog => &record.analog_drift,
    };
    let reference = match from {
        DriftDropFrom::Baseline => record.baseline_acc,
        DriftDropFrom::BranchT0 => match branch {
            DriftBranch::Noisy => record.noisy_acc.mean,
            DriftBranch::Analog => record.analog_acc.mean,
        },
    };
    reference - series[horizon].mean
}

/// The default drop reference of a branch: baseline accuracy for the noisy
/// branch, the branch's own t0 accuracy for the analog branch.
pub fn default_drop_from(branch: DriftBranch) -> DriftDropFrom {
    match branch {
        DriftBranch::Noisy => DriftDropFrom::Baseline,
        DriftBranch::Analog => DriftDropFrom::BranchT0,
    }
}

/// Labels per horizon: `drop(h) <= threshold(h)` is robust. Records failing
/// the pre-filter are excluded at every horizon.
pub fn classify_drift_robustness(
    table: &BenchmarkTable,
    branch: DriftBranch,
    thresholds: &DriftThresholds,
    prefilter: DriftPrefilter,
    from: DriftDropFrom,
) -> Result<Vec<RobustnessReport>, AnalysisError> {
    if table.is_empty() {
        return Err(AnalysisError::EmptyTable);
    }
    thresholds.validate()?;
    let series_thresholds = thresholds.for_branch(branch);
    let passes = |r: &BenchmarkRecord| {
        r.baseline_acc > prefilter.baseline_min && r.noisy_acc.mean > prefilter.noisy_min
    };
    if !table.iter().any(passes) {
        return Err(AnalysisError::EmptyFilteredSet {
            filter: format!(
                "baseline_acc > {} and noisy_acc > {}",
                prefilter.baseline_min, prefilter.noisy_min
            ),
        });
    }
    let mut reports = Vec::with_capacity(4);
    for horizon in 0..4 {
        let threshold = series_thresholds[horizon];
        let mut labels = BTreeMap::new();
        for record in table.iter() {
            let label = if !passes(record) {
                RobustnessLabel::Excluded
            } else if drift_drop(record, branch, from, horizon) <= threshold {
                RobustnessLabel::Robust
            } else {
                RobustnessLabel::NonRobust
            };
            labels.insert(record.arch_index, label);
        }
        reports.push(RobustnessReport {
            labels,
            threshold,
            criterion: format!(
                "{branch:?} drift drop(h{horizon}) <= {threshold} from {from:?}, prefilter baseline > {}, noisy > {}",
                prefilter.baseline_min, prefilter.noisy_min
            ),
        });
    }
    Ok(reports)
}

/// The three post-HWT categories, keyed by noisy accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HwtCategory {
    /// Noisy accuracy above 70%.
    NaturallyRobust,
    /// Noisy accuracy between 20% and 70% inclusive.
    Moderate,
    /// Noisy accuracy below 20%.
    NonRobust,
}

pub fn hwt_category(noisy_acc: f64) -> HwtCategory {
    if noisy_acc > 70.0 {
        HwtCategory::NaturallyRobust
    } else if noisy_acc < 20.0 {
        HwtCategory::NonRobust
    } else {
        HwtCategory::Moderate
    }
}

/// Per-record HWT outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HwtOutcome {
    pub category: HwtCategory,
    /// Relative improvement percent `100 (analog - noisy) / noisy`;
    /// undefined when noisy accuracy is zero.
    pub improvement: Option<f64>,
    /// Analog accuracy above the 80% high-performance threshold.
    pub high_performing: bool,
}

/// Category partition plus per-group analog-accuracy and improvement stats.
#[derive(Debug, Clone, PartialEq)]
pub struct HwtCategories {
    pub outcomes: BTreeMap<u32, HwtOutcome>,
    /// Analog-accuracy summary per category (categories in enum order);
    /// `None` for empty groups.
    pub analog_stats: [Option<SummaryStats>; 3],
    /// Improvement summary per category over records with defined
    /// improvement.
    pub improvement_stats: [Option<SummaryStats>; 3],
    /// Fraction of all records with analog accuracy above 80%.
    pub high_performing_share: f64,
}

/// High-performance analog accuracy threshold (percent).
pub const HIGH_ANALOG_THRESHOLD: f64 = 80.0;

pub fn hwt_categories(table: &BenchmarkTable) -> Result<HwtCategories, AnalysisError> {
    if table.is_empty() {
        return Err(AnalysisError::EmptyTable);
    }
    let mut outcomes = BTreeMap::new();
    let mut analog_by_cat: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut improv_by_cat: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut high = 0usize;
    for record in table.iter() {
        let noisy = record.noisy_acc.mean;
        let analog = record.analog_acc.mean;
        let category = hwt_category(noisy);
        let improvement = if noisy > 0.0 {
            Some(100.0 * (analog - noisy) / noisy)
        } else {
            None
        };
        let high_performing = analog > HIGH_ANALOG_THRESHOLD;
        if high_performing {
            high += 1;
        }
        let slot = category_slot(category);
        analog_by_cat[slot].push(analog);
        if let Some(imp) = improvement {
            improv_by_cat[slot].push(imp);
        }
        outcomes.insert(
            record.arch_index,
            HwtOutcome {
                category,
                improvement,
                high_performing,
            },
        );
    }
    let stats_of = |values: &Vec<f64>| {
        if values.is_empty() {
            None
        } else {
            Some(summarize(values).expect("non-empty"))
        }
    };
    Ok(HwtCategories {
        high_performing_share: high as f64 / outcomes.len() as f64,
        analog_stats: [
            stats_of(&analog_by_cat[0]),
            stats_of(&analog_by_cat[1]),
            stats_of(&analog_by_cat[2]),
        ],
        improvement_stats: [
            stats_of(&improv_by_cat[0]),
            stats_of(&improv_by_cat[1]),
            stats_of(&improv_by_cat[2]),
        ],
        outcomes,
    })
}

pub fn category_slot(category: HwtCategory) -> usize {
    match category {
        HwtCategory::NaturallyRobust => 0,
        HwtCategory::Moderate => 1,
        HwtCategory::NonRobust => 2,
    }
}
