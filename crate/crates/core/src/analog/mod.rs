//! Analog in-memory-computing inference simulator.
//!
//! Digital weights map to differential conductance pairs on a per-layer
//! crossbar; inference applies DAC input quantization, conductance read
//! noise, additive output noise, ADC output quantization, power-law
//! conductance drift, and a global per-layer drift-compensation factor.
//! Everything outside the matrix-vector products (pooling, ReLU, skip,
//! node sums, unfoldable batch norms) executes digitally.

pub mod hwt;
pub mod program;
pub mod sim;

pub use hwt::{hwt_train, HwtConfig};
pub use program::{program_network, ProgrammedLayer, ProgrammedNetwork};
pub use sim::{analog_evaluate, analog_matvec, apply_drift, compensation_factor};

use std::fmt;

use serde::{Deserialize, Serialize};

/// Crossbar hardware parameters. Defaults mirror the reference
/// configuration: 8-bit converters, output noise sigma 0.04, 25 uS maximum
/// conductance, unit programming/read noise scales, global drift
/// compensation enabled, 25 evaluation repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardwareConfig {
    /// Input converter bits; 0 disables quantization (ideal converter,
    /// diagnostics only).
    pub dac_bits: u32,
    /// Output converter bits; 0 disables quantization.
    pub adc_bits: u32,
    /// Additive output noise std, relative to the ADC clip bound.
    pub output_noise_sigma: f64,
    /// Maximum device conductance (microsiemens).
    pub g_max: f64,
    /// Scale multiplier on the conductance-dependent programming noise
    /// `std = scale * g_max * (a0 + a1 * G / g_max)`.
    pub prog_noise_scale: f64,
    pub prog_noise_a0: f64,
    pub prog_noise_a1: f64,
    /// Scale multiplier on per-access read noise `std = scale * b0 * g_max`.
    pub read_noise_scale: f64,
    pub read_noise_b0: f64,
    /// Per-device drift exponents are Normal(mean, std) truncated at 0.
    pub drift_nu_mean: f64,
    pub drift_nu_std: f64,
    /// Reference (programming) time in seconds.
    pub drift_t0_seconds: f64,
    pub global_drift_compensation: bool,
    /// Independent evaluation repeats; reported accuracy is their mean.
    pub eval_repeats: usize,
    /// How the per-layer ADC clip bound is chosen.
    pub adc_bound_mode: AdcBoundMode,
}

/// ADC clip-bound policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AdcBoundMode {
    /// Largest pre-bias output magnitude observed on the calibration pass.
    /// This keeps 8-bit output quantization steps proportional to real
    /// signal levels.
    Calibrated,
    /// Worst-case bound `columns * w_max * dac_bound` (every device at
    /// g_max, input at the clip bound). Very conservative; quantization
    /// steps become coarse for wide layers.
    FixedColumns,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        HardwareConfig {
            dac_bits: 8,
            adc_bits: 8,
            output_noise_sigma: 0.04,
            g_max: 25.0,
            prog_noise_scale: 1.0,
            prog_noise_a0: 0.01,
            prog_noise_a1: 0.03,
            read_noise_scale: 1.0,
            read_noise_b0: 0.01,
            drift_nu_mean: 0.06,
            drift_nu_std: 0.02,
            drift_t0_seconds: 20.0,
            global_drift_compensation: true,
            eval_repeats: 25,
            adc_bound_mode: AdcBoundMode::Calibrated,
        }
    }
}

impl HardwareConfig {
    /// A noiseless, drift-free, ideal-converter configuration; the analog
    /// path then reproduces the digital one up to float tolerance.
    pub fn noiseless() -> Self {
        HardwareConfig {
            dac_bits: 0,
            adc_bits: 0,
            output_noise_sigma: 0.0,
            prog_noise_scale: 0.0,
            read_noise_scale: 0.0,
            drift_nu_mean: 0.0,
            drift_nu_std: 0.0,
            ..HardwareConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), AnalogError> {
        let bits_ok = |b: u32| b == 0 || (2..=16).contains(&b);
        if !bits_ok(self.dac_bits) || !bits_ok(self.adc_bits) {
            return Err(AnalogError::InvalidConfig(
                "converter bits must be 0 (ideal) or within 2..=16".into(),
            ));
        }
        if !(self.g_max > 0.0) {
            return Err(AnalogError::InvalidConfig("g_max must be > 0".into()));
        }
        for (name, v) in [
            ("output_noise_sigma", self.output_noise_sigma),
            ("prog_noise_scale", self.prog_noise_scale),
            ("read_noise_scale", self.read_noise_scale),
            ("prog_noise_a0", self.prog_noise_a0),
            ("prog_noise_a1", self.prog_noise_a1),
            ("read_noise_b0", self.read_noise_b0),
            ("drift_nu_mean", self.drift_nu_mean),
            ("drift_nu_std", self.drift_nu_std),
        ] {
            if !(v >= 0.0) {
                return Err(AnalogError::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        if !(self.drift_t0_seconds > 0.0) {
            return Err(AnalogError::InvalidConfig("drift_t0 must be > 0".into()));
        }
        if self.eval_repeats < 1 {
            return Err(AnalogError::InvalidConfig(
                "eval_repeats must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Evaluation horizons in seconds: 60 s, 1 h, 24 h, 30 d.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftTimes(pub [f64; 4]);

impl Default for DriftTimes {
    fn default() -> Self {
        DriftTimes([60.0, 3_600.0, 86_400.0, 2_592_000.0])
    }
}

impl DriftTimes {
    pub fn validate(&self, t0: f64) -> Result<(), AnalogError> {
        if self.0[0] < t0 {
            return Err(AnalogError::InvalidConfig(format!(
                "first drift horizon {} is before t0 {}",
                self.0[0], t0
            )));
        }
        if !self.0.windows(2).all(|w| w[0] < w[1]) {
            return Err(AnalogError::InvalidConfig(
                "drift horizons must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnalogError {
    InvalidConfig(String),
    /// Drift evaluation before the programming time.
    DriftRange { t: f64, t0: f64 },
    /// A layer that cannot be mapped onto a crossbar.
    UnsupportedLayer(String),
    EmptyDataset,
}

impl fmt::Display for AnalogError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalogError::InvalidConfig(msg) => write!(f, "invalid hardware config: {msg}"),
            AnalogError::DriftRange { t, t0 } => {
                write!(f, "drift time {t} s is before programming time {t0} s")
            }
            AnalogError::UnsupportedLayer(msg) => write!(f, "unsupported layer: {msg}"),
            AnalogError::EmptyDataset => write!(f, "dataset is empty"),
        }
    }
}

impl std::error::Error for AnalogError {}
