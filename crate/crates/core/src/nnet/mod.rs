//! Minimal dense-tensor network engine.
//!
//! Builds the fixed macro-network around a searched cell, trains it with
//! SGD/Adam, evaluates top-1 accuracy, and provides int8 post-training and
//! training-aware quantization. Compute is `f32` by default; every layer is
//! generic over [`Scalar`] so gradients can be checked in `f64`.

pub mod data;
pub mod layers;
pub mod network;
pub mod quant;
pub mod tensor;
pub mod train;

pub use data::{load_cifar10_binary, synth_dataset, Dataset, SplitTag, SynthSpec};
pub use network::{build_network, EdgeOp, Network};
pub use quant::{ptq_int8, qat_train, QatConfig, QuantScheme};
pub use tensor::Tensor4;
pub use train::{evaluate_accuracy, sgd_train, EpochStats, TrainConfig};

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

/// Floating-point element type of tensors and parameters.
pub trait Scalar:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::iter::Sum
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
    /// One standard-normal draw.
    fn gauss<R: Rng>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn max(self, other: Self) -> Self {
        f32::max(self, other)
    }
    fn min(self, other: Self) -> Self {
        f32::min(self, other)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn gauss<R: Rng>(rng: &mut R) -> Self {
        rng.sample::<f32, _>(StandardNormal)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn max(self, other: Self) -> Self {
        f64::max(self, other)
    }
    fn min(self, other: Self) -> Self {
        f64::min(self, other)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn gauss<R: Rng>(rng: &mut R) -> Self {
        rng.sample::<f64, _>(StandardNormal)
    }
}

/// Errors raised by the network engine.
#[derive(Debug, Clone, PartialEq)]
pub enum NnetError {
    /// Training loss became non-finite at the given epoch.
    Divergence { epoch: usize },
    /// Evaluation or calibration on an empty dataset.
    EmptyDataset,
    /// Tensor shapes incompatible with the operation.
    ShapeMismatch { expected: String, got: String },
    /// Dataset file malformed; offset is in bytes.
    Format { offset: u64, reason: String },
    /// I/O failure while reading a dataset or weight container.
    Io(String),
    /// Config field violates its invariant.
    InvalidConfig(String),
}

impl fmt::Display for NnetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnetError::Divergence { epoch } => {
                write!(f, "training diverged (non-finite loss) at epoch {epoch}")
            }
            NnetError::EmptyDataset => write!(f, "dataset is empty"),
            NnetError::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected}, got {got}")
            }
            NnetError::Format { offset, reason } => {
                write!(f, "malformed dataset file at byte {offset}: {reason}")
            }
            NnetError::Io(msg) => write!(f, "i/o error: {msg}"),
            NnetError::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl std::error::Error for NnetError {}

impl From<std::io::Error> for NnetError {
    fn from(err: std::io::Error) -> Self {
        NnetError::Io(err.to_string())
    }
}
