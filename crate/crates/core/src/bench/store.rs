//! JSON-lines persistence, partition merging, and CSV export of benchmark
//! tables.
//!
//! File layout: line 1 is the table metadata object, every following line
//! one record object, UTF-8, LF-terminated, records in ascending
//! architecture order, keys in declaration order. The format is diffable
//! and partition files concatenate via [`merge_tables`].

use std::fmt;
use std::path::Path;

use super::{BenchmarkRecord, BenchmarkTable, TableMetadata, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub enum StoreError {
    Io(String),
    /// Malformed line; 1-based line number.
    Parse { line: usize, message: String },
    /// File written by an incompatible schema; migration required.
    SchemaVersion { found: u32, expected: u32 },
    /// A record violates a field invariant.
    Validation { line: usize, message: String },
    /// Same architecture appears twice in one file.
    DuplicateIndex { line: usize, index: u32 },
    /// Partitions with differing metadata cannot merge.
    MetadataMismatch { detail: String },
    /// Partitions carry different records for the same architectures.
    Conflict { indices: Vec<u32> },
    /// Query for an architecture the table does not contain.
    NotFound { index: u32 },
}

impl fmt::Display for StoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoreError::Io(msg) => write!(f, "i/o error: {msg}"),
            StoreError::Parse { line, message } => write!(f, "line {line}: {message}"),
            StoreError::SchemaVersion { found, expected } => write!(
                f,
                "schema version {found} requires migration to {expected}"
            ),
            StoreError::Validation { line, message } => {
                write!(f, "line {line}: invalid record: {message}")
            }
            StoreError::DuplicateIndex { line, index } => {
                write!(f, "line {line}: duplicate record for architecture {index}")
            }
            StoreError::MetadataMismatch { detail } => {
                write!(f, "partition metadata mismatch: {detail}")
            }
            StoreError::Conflict { indices } => {
                write!(f, "conflicting records for architectures {indices:?}")
            }
            StoreError::NotFound { index } => {
                write!(f, "architecture {index} not in table")
            }
        }
    }
}

impl std::error::Error for StoreError {}

impl From<std::io::Error> for StoreError {
    fn from(err: std::io::Error) -> Self {
        StoreError::Io(err.to_string())
    }
}

/// Serializes a table to its JSON-lines byte form.
pub fn table_to_bytes(table: &BenchmarkTable) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&table.metadata).expect("metadata serializes"));
    out.push('\n');
    for record in table.records.values() {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out.into_bytes()
}

/// Writes the JSON-lines file (metadata line + one line per record).
pub fn save_table(table: &BenchmarkTable, path: &Path) -> Result<(), StoreError> {
    std::fs::write(path, table_to_bytes(table))?;
    Ok(())
}

/// Parses a table from JSON-lines bytes, validating every record.
pub fn table_from_bytes(bytes: &[u8]) -> Result<BenchmarkTable, StoreError> {
    let text = std::str::from_utf8(bytes).map_err(|e| StoreError::Parse {
        line: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    let mut lines = text.lines().enumerate();
    let (_, meta_line) = lines.next().ok_or(StoreError::Parse {
        line: 1,
        message: "empty file".to_string(),
    })?;
    let metadata: TableMetadata =
        serde_json::from_str(meta_line).map_err(|e| StoreError::Parse {
            line: 1,
            message: format!("bad metadata: {e}"),
        })?;
    if metadata.schema_version != SCHEMA_VERSION {
        return Err(StoreError::SchemaVersion {
            found: metadata.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let mut table = BenchmarkTable::new(metadata);
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: BenchmarkRecord =
            serde_json::from_str(line).map_err(|e| StoreError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        record.validate().map_err(|message| StoreError::Validation {
            line: line_no,
            message,
        })?;
        if table.records.contains_key(&record.arch_index) {
            return Err(StoreError::DuplicateIndex {
                line: line_no,
                index: record.arch_index,
            });
        }
        table.put(record);
    }
    Ok(table)
}

/// Loads and validates a table file.
pub fn load_table(path: &Path) -> Result<BenchmarkTable, StoreError> {
    let bytes = std::fs::read(path)?;
    table_from_bytes(&bytes)
}

/// Unions partition tables produced under one configuration.
///
/// Identical duplicate records deduplicate silently; differing records for
/// the same architecture are a conflict. Associative and commutative up to
/// record-set equality.
pub fn merge_tables(partitions: Vec<BenchmarkTable>) -> Result<BenchmarkTable, StoreError> {
    let mut iter = partitions.into_iter();
    let mut merged = iter.next().ok_or(StoreError::MetadataMismatch {
        detail: "no partitions given".to_string(),
    })?;
    let mut conflicts = Vec::new();
    for part in iter {
        if part.metadata != merged.metadata {
            let detail = if part.metadata.config_digest != merged.metadata.config_digest {
                format!(
                    "config digest {} != {}",
                    part.metadata.config_digest, merged.metadata.config_digest
                )
            } else {
                "metadata fields differ".to_string()
            };
            return Err(StoreError::MetadataMismatch { detail });
        }
        for (index, record) in part.records {
            match merged.records.get(&index) {
                None => {
                    merged.records.insert(index, record);
                }
                Some(existing) if *existing == record => {}
                Some(_) => conflicts.push(index),
            }
        }
    }
    if !conflicts.is_empty() {
        conflicts.sort_unstable();
        conflicts.dedup();
        return Err(StoreError::Conflict { indices: conflicts });
    }
    Ok(merged)
}

/// Scalar fields exportable to CSV, in canonical column order.
pub const EXPORT_FIELDS: &[&str] = &[
    "arch_index",
    "baseline_acc",
    "ptq_acc",
    "qat_acc",
    "noisy_acc_mean",
    "noisy_acc_std",
    "analog_acc_mean",
    "analog_acc_std",
    "noisy_drift_60s",
    "noisy_drift_1h",
    "noisy_drift_1d",
    "noisy_drift_30d",
    "analog_drift_60s",
    "analog_drift_1h",
    "analog_drift_1d",
    "analog_drift_30d",
    "param_count",
];

/// Extracts one exportable field from a record.
pub fn record_field(record: &BenchmarkRecord, field: &str) -> Option<f64> {
    let drift = |series: &[super::AccuracyStat], i: usize| series.get(i).map(|s| s.mean);
    match field {
        "arch_index" => Some(f64::from(record.arch_index)),
        "baseline_acc" => Some(record.baseline_acc),
        "ptq_acc" => Some(record.ptq_acc),
        "qat_acc" => Some(record.qat_acc),
        "noisy_acc_mean" => Some(record.noisy_acc.mean),
        "noisy_acc_std" => Some(record.noisy_acc.std),
        "analog_acc_mean" => Some(record.analog_acc.mean),
        "analog_acc_std" => Some(record.analog_acc.std),
        "noisy_drift_60s" => drift(&record.noisy_drift, 0),
        "noisy_drift_1h" => drift(&record.noisy_drift, 1),
        "noisy_drift_1d" => drift(&record.noisy_drift, 2),
        "noisy_drift_30d" => drift(&record.noisy_drift, 3),
        "analog_drift_60s" => drift(&record.analog_drift, 0),
        "analog_drift_1h" => drift(&record.analog_drift, 1),
        "analog_drift_1d" => drift(&record.analog_drift, 2),
        "analog_drift_30d" => drift(&record.analog_drift, 3),
        "param_count" => Some(record.param_count as f64),
        _ => None,
    }
}

/// CSV text of the chosen fields, one row per record in ascending index
/// order. Unknown fields are an error listing the valid names.
pub fn export_csv(table: &BenchmarkTable, fields: &[&str]) -> Result<String, StoreError> {
    for field in fields {
        if !EXPORT_FIELDS.contains(field) {
            return Err(StoreError::Parse {
                line: 0,
                message: format!(
                    "unknown export field {field:?}; valid fields: {}",
                    EXPORT_FIELDS.join(", ")
                ),
            });
        }
    }
    let mut out = fields.join(",");
    out.push('\n');
    for record in table.records.values() {
        let row: Vec<String> = fields
            .iter()
            .map(|f| format!("{}", record_field(record, f).expect("field checked")))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}
