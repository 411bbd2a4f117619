//! Per-architecture benchmark records, the on-disk table, and the full
//! evaluation pipeline that produces them.

pub mod pipeline;
pub mod store;

pub use pipeline::{run_full_pipeline, PipelineConfig, PipelineError};
pub use store::{load_table, merge_tables, save_table, StoreError};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::space::{ArchIndex, CellEncoding};

/// On-disk schema version of tables and records.
pub const SCHEMA_VERSION: u32 = 1;

/// Mean and standard deviation of a repeated accuracy measurement, percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStat {
    pub mean: f64,
    pub std: f64,
}

impl AccuracyStat {
    /// From an (accuracy fraction, std) pair in [0, 1].
    pub fn from_fraction(mean: f64, std: f64) -> Self {
        AccuracyStat {
            mean: mean * 100.0,
            std: std * 100.0,
        }
    }
}

/// Reproducibility data attached to every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Per-architecture base seed all stage seeds derive from.
    pub seed: u64,
    /// Digest of the full pipeline configuration.
    pub config_digest: String,
    /// Digest of the stored weight container, when weights were kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_digest: Option<String>,
    /// Fixed methodological notes (BN statistics not recalibrated after
    /// programming, stem/head quantized, one programming per branch, ...).
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Every metric the pipeline measures for one architecture. Accuracies are
/// stored in percent (0..=100).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub schema_version: u32,
    pub arch_index: u32,
    /// Canonical op codes, least-significant edge first.
    pub encoding: [u8; 6],
    pub baseline_acc: f64,
    pub ptq_acc: f64,
    pub qat_acc: f64,
    pub noisy_acc: AccuracyStat,
    pub analog_acc: AccuracyStat,
    /// Four entries ordered by the drift horizons.
    pub noisy_drift: Vec<AccuracyStat>,
    pub analog_drift: Vec<AccuracyStat>,
    pub param_count: u64,
    pub provenance: Provenance,
}

impl BenchmarkRecord {
    pub fn arch(&self) -> ArchIndex {
        ArchIndex(self.arch_index)
    }

    pub fn cell(&self) -> CellEncoding {
        CellEncoding::from_codes(self.encoding).expect("validated encoding")
    }

    /// Checks every field invariant; `line` contextualizes store errors.
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "record schema version {} != {}",
                self.schema_version, SCHEMA_VERSION
            ));
        }
        let enc = CellEncoding::from_codes(self.encoding).map_err(|e| e.to_string())?;
        if enc.to_index().0 != self.arch_index {
            return Err(format!(
                "encoding {:?} does not match arch_index {}",
                self.encoding, self.arch_index
            ));
        }
        let check = |name: &str, v: f64| -> Result<(), String> {
            if !(0.0..=100.0).contains(&v) {
                Err(format!("{name} = {v} outside [0, 100]"))
            } else {
                Ok(())
            }
        };
        check("baseline_acc", self.baseline_acc)?;
        check("ptq_acc", self.ptq_acc)?;
        check("qat_acc", self.qat_acc)?;
        check("noisy_acc.mean", self.noisy_acc.mean)?;
        check("analog_acc.mean", self.analog_acc.mean)?;
        for (name, series) in [
            ("noisy_drift", &self.noisy_drift),
            ("analog_drift", &self.analog_drift),
        ] {
            if series.len() != 4 {
                return Err(format!("{name} has {} entries, expected 4", series.len()));
            }
            for (i, stat) in series.iter().enumerate() {
                check(&format!("{name}[{i}].mean"), stat.mean)?;
            }
        }
        if self.provenance.config_digest.is_empty() {
            return Err("provenance config digest missing".to_string());
        }
        Ok(())
    }
}

/// Table-level metadata shared by all records in a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMetadata {
    pub schema_version: u32,
    pub code_version: String,
    /// Digest of the pipeline configuration; partitions must agree on it.
    pub config_digest: String,
    /// The full configuration, embedded for self-describing files.
    pub config: serde_json::Value,
}

/// In-memory benchmark table: at most one record per architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTable {
    pub metadata: TableMetadata,
    pub records: BTreeMap<u32, BenchmarkRecord>,
}

impl BenchmarkTable {
    pub fn new(metadata: TableMetadata) -> Self {
        BenchmarkTable {
            metadata,
            records: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Inserts a record, replacing any previous record of the same index.
    pub fn put(&mut self, record: BenchmarkRecord) {
        self.records.insert(record.arch_index, record);
    }

    /// Looks a record up by index; encoding keys convert via
    /// [`CellEncoding::to_index`].
    pub fn query(&self, index: ArchIndex) -> Result<&BenchmarkRecord, StoreError> {
        self.records
            .get(&index.0)
            .ok_or(StoreError::NotFound { index: index.0 })
    }

    pub fn query_encoding(&self, enc: &CellEncoding) -> Result<&BenchmarkRecord, StoreError> {
        self.query(enc.to_index())
    }

    /// Records in ascending architecture order.
    pub fn iter(&self) -> impl Iterator<Item = &BenchmarkRecord> {
        self.records.values()
    }
}

/// SHA-256 hex digest of a serializable config (canonical JSON bytes).
pub fn config_digest<T: Serialize>(config: &T) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_string(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn dummy_record(index: u32) -> BenchmarkRecord {
        let enc = CellEncoding::from_index(ArchIndex(index)).unwrap();
        let stat = AccuracyStat {
            mean: 50.0,
            std: 1.0,
        };
        BenchmarkRecord {
            schema_version: SCHEMA_VERSION,
            arch_index: index,
            encoding: enc.codes(),
            baseline_acc: 90.0,
            ptq_acc: 88.0,
            qat_acc: 89.0,
            noisy_acc: stat,
            analog_acc: stat,
            noisy_drift: vec![stat; 4],
            analog_drift: vec![stat; 4],
            param_count: 1000,
            provenance: Provenance {
                seed: 1,
                config_digest: "abc".to_string(),
                weights_digest: None,
                notes: vec![],
            },
        }
    }

    #[test]
    fn record_validation_catches_breaches() {
        let good = dummy_record(12);
        assert!(good.validate().is_ok());

        let mut bad = dummy_record(12);
        bad.baseline_acc = 101.0;
        assert!(bad.validate().unwrap_err().contains("baseline_acc"));

        let mut bad = dummy_record(12);
        bad.noisy_drift.pop();
        assert!(bad.validate().unwrap_err().contains("noisy_drift"));

        let mut bad = dummy_record(12);
        bad.arch_index = 13;
        assert!(bad.validate().is_err());

        let mut bad = dummy_record(12);
        bad.provenance.config_digest.clear();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn query_by_index_and_encoding_agree() {
        let meta = TableMetadata {
            schema_version: SCHEMA_VERSION,
            code_version: "test".to_string(),
            config_digest: "d".to_string(),
            config: serde_json::json!({}),
        };
        let mut table = BenchmarkTable::new(meta);
        table.put(dummy_record(77));
        let e = CellEncoding::from_index(ArchIndex(77)).unwrap();
        assert_eq!(
            table.query(ArchIndex(77)).unwrap(),
            table.query_encoding(&e).unwrap()
        );
        assert!(matches!(
            table.query(ArchIndex(78)),
            Err(StoreError::NotFound { index: 78 })
        ));
    }
}
