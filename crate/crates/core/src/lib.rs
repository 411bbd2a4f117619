//! Desk-scale benchmark pipeline for cell-based architecture search under
//! analog in-memory-computing constraints.
//!
//! The crate is organized around the benchmark data flow:
//!
//! * [`space`] — the 15,625-cell search space: encodings, enumeration,
//!   graph construction, and path extraction.
//! * [`nnet`] — a minimal dense-tensor network engine: macro-network
//!   assembly from a cell encoding, SGD/Adam training, evaluation,
//!   int8 PTQ/QAT, and dataset loading/synthesis.
//! * [`analog`] — crossbar inference simulation: differential conductance
//!   programming, DAC/ADC quantization, programming/read/output noise,
//!   power-law conductance drift with global compensation, and
//!   hardware-aware training.
//! * [`bench`] — the per-architecture evaluation pipeline plus persistent
//!   benchmark tables (JSON-lines) with merge/query support.
//! * [`analysis`] — rank correlations, distribution summaries, robustness
//!   classification, operation/path statistics, and graph-feature analysis.
//! * [`search`] — NAS strategies over a benchmark table: exhaustive,
//!   random, regularized evolution, surrogate-based Bayesian optimization,
//!   path-predictor ensemble search, and constrained analog-aware
//!   evolution, backed by an in-crate gradient-boosted-trees surrogate.

pub mod analog;
pub mod analysis;
pub mod bench;
pub mod nnet;
pub mod rng;
pub mod search;
pub mod space;

/// Version tag embedded in persisted benchmark metadata.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
