//! Search objectives: which metric to maximize and where evaluations come
//! from (a frozen benchmark table or the live pipeline).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bench::{run_full_pipeline, BenchmarkRecord, BenchmarkTable, PipelineConfig};
use crate::nnet::data::DatasetPair;
use crate::space::{ArchIndex, CellEncoding, SPACE_SIZE};

/// Index of the 1-day horizon in the drift series.
pub const DAY1_HORIZON: usize = 2;

/// Which accuracy variation over one month is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AvmDefinition {
    /// Analog accuracy at 60 s minus at 30 d (default reading).
    From60s,
    /// Analog accuracy at t0 minus at 30 d.
    FromT0,
}

/// Accuracy variation over one month, percentage points. Can be negative
/// when drift transiently helps.
pub fn avm(record: &BenchmarkRecord, def: AvmDefinition) -> f64 {
    match def {
        AvmDefinition::From60s => record.analog_drift[0].mean - record.analog_drift[3].mean,
        AvmDefinition::FromT0 => record.analog_acc.mean - record.analog_drift[3].mean,
    }
}

/// The scalar a search maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    Baseline,
    Ptq,
    Qat,
    Noisy,
    Analog,
    /// Noisy-branch accuracy at a drift-horizon index (0..4).
    NoisyDrift(usize),
    /// Analog-branch accuracy at a drift-horizon index.
    AnalogDrift(usize),
}

impl MetricKind {
    pub fn of(&self, record: &BenchmarkRecord) -> f64 {
        match *self {
            MetricKind::Baseline => record.baseline_acc,
            MetricKind::Ptq => record.ptq_acc,
            MetricKind::Qat => record.qat_acc,
            MetricKind::Noisy => record.noisy_acc.mean,
            MetricKind::Analog => record.analog_acc.mean,
            MetricKind::NoisyDrift(h) => record.noisy_drift[h].mean,
            MetricKind::AnalogDrift(h) => record.analog_drift[h].mean,
        }
    }
}

/// Objective: maximize the primary metric; AVM is the secondary
/// (minimized / constrained) quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub metric: MetricKind,
    pub avm: AvmDefinition,
}

impl Default for ObjectiveSpec {
    /// The headline objective: analog accuracy after one day of drift.
    fn default() -> Self {
        ObjectiveSpec {
            metric: MetricKind::AnalogDrift(DAY1_HORIZON),
            avm: AvmDefinition::From60s,
        }
    }
}

/// The candidate set a search runs over.
#[derive(Debug, Clone, PartialEq)]
pub enum SearchSpace {
    /// All 15,625 architectures.
    Full,
    /// An explicit subset of architecture indices.
    Subset(Vec<u32>),
}

/// Everything a strategy learns from one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalData {
    pub value: f64,
    pub avm: f64,
    pub param_count: u64,
    pub baseline_acc: f64,
    pub noisy_acc: f64,
    pub day1_mean: f64,
    pub day1_std: f64,
}

impl EvalData {
    pub fn from_record(record: &BenchmarkRecord, spec: &ObjectiveSpec) -> Self {
        EvalData {
            value: spec.metric.of(record),
            avm: avm(record, spec.avm),
            param_count: record.param_count,
            baseline_acc: record.baseline_acc,
            noisy_acc: record.noisy_acc.mean,
            day1_mean: record.analog_drift[DAY1_HORIZON].mean,
            day1_std: record.analog_drift[DAY1_HORIZON].std,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchError {
    /// A strategy asked for more evaluations than the budget allows.
    BudgetExhausted,
    /// Table objective queried an architecture without a record.
    MissingRecord { index: u32 },
    /// Exhaustive search requires full coverage of the space.
    IncompleteTable { missing: Vec<u32> },
    InvalidConfig(String),
    /// No architecture satisfies the constraints.
    InfeasibleConstraint(String),
    /// Live-pipeline evaluation failed.
    Pipeline(String),
}

impl fmt::Display for SearchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SearchError::BudgetExhausted => write!(f, "query budget exhausted"),
            SearchError::MissingRecord { index } => {
                write!(f, "architecture {index} not in the benchmark table")
            }
            SearchError::IncompleteTable { missing } => {
                let shown: Vec<String> = missing.iter().take(20).map(u32::to_string).collect();
                let suffix = if missing.len() > 20 {
                    format!(" (+{} more)", missing.len() - 20)
                } else {
                    String::new()
                };
                write!(
                    f,
                    "table incomplete: {} architectures missing: {}{suffix}",
                    missing.len(),
                    shown.join(", ")
                )
            }
            SearchError::InvalidConfig(msg) => write!(f, "invalid search config: {msg}"),
            SearchError::InfeasibleConstraint(msg) => write!(f, "infeasible constraint: {msg}"),
            SearchError::Pipeline(msg) => write!(f, "live evaluation failed: {msg}"),
        }
    }
}

impl std::error::Error for SearchError {}

/// Where objective values come from.
pub trait EvalSource {
    /// Sorted candidate indices of the searchable space.
    fn candidates(&self) -> &[u32];

    /// Evaluates one architecture. Strategies only call this through the
    /// memoizing harness.
    fn eval(&mut self, index: u32) -> Result<EvalData, SearchError>;

    /// Architecture metadata available without spending budget (parameter
    /// count is derivable from the encoding alone).
    fn param_count_of(&self, index: u32) -> Option<u64>;
}

fn space_candidates(space: &SearchSpace) -> Result<Vec<u32>, SearchError> {
    match space {
        SearchSpace::Full => Ok((0..SPACE_SIZE).collect()),
        SearchSpace::Subset(indices) => {
            if indices.is_empty() {
                return Err(SearchError::InvalidConfig("empty search space".into()));
            }
            let mut sorted = indices.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if let Some(&bad) = sorted.iter().find(|&&i| i >= SPACE_SIZE) {
                return Err(SearchError::InvalidConfig(format!(
                    "index {bad} outside the space"
                )));
            }
            Ok(sorted)
        }
    }
}

/// Frozen-table objective: evaluations are record lookups.
pub struct TableObjective<'a> {
    table: &'a BenchmarkTable,
    spec: ObjectiveSpec,
    candidates: Vec<u32>,
}

impl<'a> TableObjective<'a> {
    pub fn new(
        table: &'a BenchmarkTable,
        spec: ObjectiveSpec,
        space: SearchSpace,
    ) -> Result<Self, SearchError> {
        Ok(TableObjective {
            table,
            spec,
            candidates: space_candidates(&space)?,
        })
    }

    /// Candidates without a record, ascending (empty when fully covered).
    pub fn missing(&self) -> Vec<u32> {
        self.candidates
            .iter()
            .copied()
            .filter(|i| !self.table.records.contains_key(i))
            .collect()
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }
}

impl EvalSource for TableObjective<'_> {
    fn candidates(&self) -> &[u32] {
        &self.candidates
    }

    fn eval(&mut self, index: u32) -> Result<EvalData, SearchError> {
        let record = self
            .table
            .records
            .get(&index)
            .ok_or(SearchError::MissingRecord { index })?;
        Ok(EvalData::from_record(record, &self.spec))
    }

    fn param_count_of(&self, index: u32) -> Option<u64> {
        self.table.records.get(&index).map(|r| r.param_count)
    }
}

/// Live objective: every evaluation runs the full pipeline (training plus
/// all analog evaluations). Slow by nature; meant for small budgets.
pub struct LivePipelineSource {
    pub data: DatasetPair,
    pub cfg: PipelineConfig,
    pub seed: u64,
    pub spec: ObjectiveSpec,
    candidates: Vec<u32>,
    cache: BTreeMap<u32, BenchmarkRecord>,
}

impl LivePipelineSource {
    pub fn new(
        data: DatasetPair,
        cfg: PipelineConfig,
        seed: u64,
        spec: ObjectiveSpec,
        space: SearchSpace,
    ) -> Result<Self, SearchError> {
        Ok(LivePipelineSource {
            data,
            cfg,
            seed,
            spec,
            candidates: space_candidates(&space)?,
            cache: BTreeMap::new(),
        })
    }

    /// Records produced so far (useful to persist after a live search).
    pub fn evaluated_records(&self) -> impl Iterator<Item = &BenchmarkRecord> {
        self.cache.values()
    }
}

impl EvalSource for LivePipelineSource {
    fn candidates(&self) -> &[u32] {
        &self.candidates
    }

    fn eval(&mut self, index: u32) -> Result<EvalData, SearchError> {
        if !self.cache.contains_key(&index) {
            let enc = CellEncoding::from_index(ArchIndex(index))
                .map_err(|e| SearchError::InvalidConfig(e.to_string()))?;
            let record = run_full_pipeline(&enc, &self.data, &self.cfg, self.seed)
                .map_err(|e| SearchError::Pipeline(e.to_string()))?;
            self.cache.insert(index, record);
        }
        Ok(EvalData::from_record(&self.cache[&index], &self.spec))
    }

    fn param_count_of(&self, index: u32) -> Option<u64> {
        let enc = CellEncoding::from_index(ArchIndex(index)).ok()?;
        Some(crate::nnet::network::param_count_closed_form(&enc, &self.cfg.macro_cfg) as u64)
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::bench::{AccuracyStat, Provenance, TableMetadata, SCHEMA_VERSION};

    /// A deterministic synthetic table whose day-1 analog accuracy is a
    /// separable function of the encoding (sum of per-edge op scores).
    pub fn synthetic_table(indices: &[u32]) -> BenchmarkTable {
        let mut table = BenchmarkTable::new(TableMetadata {
            schema_version: SCHEMA_VERSION,
            code_version: "test".to_string(),
            config_digest: "synthetic".to_string(),
            config: serde_json::json!({}),
        });
        for &index in indices {
            table.put(synthetic_record(index));
        }
        table
    }

    /// Per-edge op scores; op 2 is best, op 1 worst.
    pub const OP_SCORE: [f64; 5] = [6.0, 0.0, 10.0, 4.0, 5.0];

    pub fn objective_value(enc: &CellEncoding) -> f64 {
        20.0 + enc.ops.iter().map(|op| OP_SCORE[op.code() as usize]).sum::<f64>()
    }

    pub fn synthetic_record(index: u32) -> BenchmarkRecord {
        let enc = CellEncoding::from_index(ArchIndex(index)).unwrap();
        let day1 = objective_value(&enc);
        let stat = |v: f64| AccuracyStat { mean: v, std: 0.3 };
        BenchmarkRecord {
            schema_version: SCHEMA_VERSION,
            arch_index: index,
            encoding: enc.codes(),
            baseline_acc: (day1 + 10.0).min(100.0),
            ptq_acc: (day1 + 8.0).min(100.0),
            qat_acc: (day1 + 9.0).min(100.0),
            noisy_acc: stat((day1 - 5.0).max(0.0)),
            analog_acc: stat((day1 + 2.0).min(100.0)),
            noisy_drift: vec![
                stat((day1 - 8.0).max(0.0)),
                stat((day1 - 12.0).max(0.0)),
                stat((day1 - 16.0).max(0.0)),
                stat((day1 - 20.0).max(0.0)),
            ],
            analog_drift: vec![
                stat((day1 + 1.0).min(100.0)),
                stat((day1 + 0.5).min(100.0)),
                stat(day1),
                stat((day1 - 1.0 - (index % 7) as f64 * 0.3).max(0.0)),
            ],
            param_count: 500 + u64::from(index % 100) * 10,
            provenance: Provenance {
                seed: 0,
                config_digest: "synthetic".to_string(),
                weights_digest: None,
                notes: vec![],
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn avm_definitions() {
        let record = synthetic_record(42);
        let from_60s = avm(&record, AvmDefinition::From60s);
        let from_t0 = avm(&record, AvmDefinition::FromT0);
        assert!(
            (from_60s - (record.analog_drift[0].mean - record.analog_drift[3].mean)).abs() < 1e-12
        );
        assert!((from_t0 - (record.analog_acc.mean - record.analog_drift[3].mean)).abs() < 1e-12);
    }

    #[test]
    fn table_objective_reports_missing_records() {
        let table = synthetic_table(&[1, 2, 3]);
        let spec = ObjectiveSpec::default();
        let obj = TableObjective::new(
            &table,
            spec,
            SearchSpace::Subset(vec![1, 2, 3, 4, 5]),
        )
        .unwrap();
        assert_eq!(obj.missing(), vec![4, 5]);

        let mut obj = obj;
        assert!(obj.eval(2).is_ok());
        assert!(matches!(
            obj.eval(4),
            Err(SearchError::MissingRecord { index: 4 })
        ));
    }

    #[test]
    fn search_space_validation() {
        let table = synthetic_table(&[1]);
        assert!(TableObjective::new(
            &table,
            ObjectiveSpec::default(),
            SearchSpace::Subset(vec![])
        )
        .is_err());
        assert!(TableObjective::new(
            &table,
            ObjectiveSpec::default(),
            SearchSpace::Subset(vec![20_000])
        )
        .is_err());
    }
}
