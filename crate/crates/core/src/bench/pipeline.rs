//! The full per-architecture evaluation pipeline: digital training,
//! PTQ/QAT, crossbar programming, noisy/drift evaluation of the digital
//! weights, hardware-aware retraining, and the same analog evaluations for
//! the retrained network.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{config_digest, AccuracyStat, BenchmarkRecord, Provenance, SCHEMA_VERSION};
use crate::analog::{analog_evaluate, hwt_train, program_network, DriftTimes, HardwareConfig, HwtConfig};
use crate::nnet::data::DatasetPair;
use crate::nnet::{
    build_network, evaluate_accuracy, ptq_int8, qat_train, sgd_train, QatConfig, TrainConfig,
};
use crate::rng::derive_seed;
use crate::space::{CellEncoding, MacroConfig};

/// Everything the pipeline needs besides the dataset and the architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub macro_cfg: MacroConfig,
    pub train: TrainConfig,
    pub qat: QatConfig,
    pub hwt: HwtConfig,
    pub hw: HardwareConfig,
    pub drift_times: DriftTimes,
    /// Training samples used to calibrate converter bounds at programming.
    pub calib_samples: usize,
}

impl PipelineConfig {
    pub fn desk() -> Self {
        PipelineConfig {
            macro_cfg: MacroConfig::desk(),
            train: TrainConfig::desk(),
            qat: QatConfig::default(),
            hwt: HwtConfig::desk(),
            hw: HardwareConfig::default(),
            drift_times: DriftTimes::default(),
            calib_samples: 64,
        }
    }

    pub fn digest(&self) -> String {
        config_digest(self)
    }
}

/// A stage failure; partial records are never produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineError {
    pub stage: &'static str,
    pub message: String,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pipeline stage {:?} failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for PipelineError {}

fn at<E: fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        message: e.to_string(),
    }
}

/// Methodological notes attached to every record.
const PROVENANCE_NOTES: &[&str] = &[
    "bn-stats-not-recalibrated-after-programming",
    "quantization-covers-stem-and-head",
    "one-programming-per-drift-branch",
    "hwt-initialized-from-digital-weights",
];

/// Runs every stage for one architecture and returns the complete record.
/// Bit-identical for identical (encoding, data, config, seed).
pub fn run_full_pipeline(
    enc: &CellEncoding,
    data: &DatasetPair,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<BenchmarkRecord, PipelineError> {
    let index = enc.to_index();
    let arch_seed = derive_seed(seed, "arch", u64::from(index.0));
    let calib = data.train.take(cfg.calib_samples.max(1));
    let t0 = cfg.hw.drift_t0_seconds;
    cfg.drift_times.validate(t0).map_err(at("config"))?;

    // Digital training and baseline accuracy.
    let mut net = build_network::<f32>(enc, &cfg.macro_cfg, derive_seed(arch_seed, "net-init", 0));
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = derive_seed(arch_seed, "digital-train", 0);
    sgd_train(&mut net, &data.train, &train_cfg).map_err(at("digital-train"))?;
    let baseline = evaluate_accuracy(&mut net, &data.test).map_err(at("baseline-eval"))?;

    // Post-training quantization.
    let mut ptq_net = ptq_int8(&net, &calib, &cfg.qat.scheme).map_err(at("ptq"))?;
    let ptq_acc = evaluate_accuracy(&mut ptq_net, &data.test).map_err(at("ptq-eval"))?;

    // Quantization-aware fine-tuning from the digital weights.
    let mut qat_cfg = cfg.qat.clone();
    qat_cfg.seed = derive_seed(arch_seed, "qat-train", 0);
    let (mut qat_net, _) = qat_train(&net, &data.train, &qat_cfg).map_err(at("qat-train"))?;
    let qat_acc = evaluate_accuracy(&mut qat_net, &data.test).map_err(at("qat-eval"))?;

    // Noisy branch: the digitally trained weights on the crossbar. One
    // programming serves the undrifted accuracy and all drift horizons.
    let pnet = program_network(&net, &calib, &cfg.hw, derive_seed(arch_seed, "program-digital", 0))
        .map_err(at("program-digital"))?;
    let noisy = analog_evaluate(&pnet, &data.test, &cfg.hw, t0, derive_seed(arch_seed, "noisy-eval", 0))
        .map_err(at("noisy-eval"))?;
    let mut noisy_drift = Vec::with_capacity(4);
    for (i, &t) in cfg.drift_times.0.iter().enumerate() {
        let stat = analog_evaluate(
            &pnet,
            &data.test,
            &cfg.hw,
            t,
            derive_seed(arch_seed, "noisy-drift-eval", i as u64),
        )
        .map_err(at("noisy-drift-eval"))?;
        noisy_drift.push(AccuracyStat::from_fraction(stat.0, stat.1));
    }

    // Analog branch: hardware-aware retraining from the digital weights,
    // then the same programming and evaluations.
    let mut hwt_cfg = cfg.hwt.clone();
    hwt_cfg.train.seed = derive_seed(arch_seed, "hwt-train", 0);
    let (hwt_net, _) = hwt_train(
        &net,
        &data.train,
        &cfg.hw,
        &hwt_cfg,
        derive_seed(arch_seed, "hwt-noise", 0),
    )
    .map_err(at("hwt-train"))?;
    let apnet = program_network(&hwt_net, &calib, &cfg.hw, derive_seed(arch_seed, "program-hwt", 0))
        .map_err(at("program-hwt"))?;
    let analog = analog_evaluate(&apnet, &data.test, &cfg.hw, t0, derive_seed(arch_seed, "analog-eval", 0))
        .map_err(at("analog-eval"))?;
    let mut analog_drift = Vec::with_capacity(4);
    for (i, &t) in cfg.drift_times.0.iter().enumerate() {
        let stat = analog_evaluate(
            &apnet,
            &data.test,
            &cfg.hw,
            t,
            derive_seed(arch_seed, "analog-drift-eval", i as u64),
        )
        .map_err(at("analog-drift-eval"))?;
        analog_drift.push(AccuracyStat::from_fraction(stat.0, stat.1));
    }

    let mut notes: Vec<String> = PROVENANCE_NOTES.iter().map(|s| s.to_string()).collect();
    if pnet.any_compensation_disabled() {
        notes.push("compensation-disabled-for-some-layer:noisy".to_string());
    }
    if apnet.any_compensation_disabled() {
        notes.push("compensation-disabled-for-some-layer:analog".to_string());
    }

    let record = BenchmarkRecord {
        schema_version: SCHEMA_VERSION,
        arch_index: index.0,
        encoding: enc.codes(),
        baseline_acc: baseline * 100.0,
        ptq_acc: ptq_acc * 100.0,
        qat_acc: qat_acc * 100.0,
        noisy_acc: AccuracyStat::from_fraction(noisy.0, noisy.1),
        analog_acc: AccuracyStat::from_fraction(analog.0, analog.1),
        noisy_drift,
        analog_drift,
        param_count: net.param_count() as u64,
        provenance: Provenance {
            seed,
            config_digest: cfg.digest(),
            weights_digest: None,
            notes,
        },
    };
    debug_assert!(record.validate().is_ok());
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::data::{synth_dataset, SynthSpec};
    use crate::space::ArchIndex;

    fn tiny_cfg() -> PipelineConfig {
        let mut cfg = PipelineConfig::desk();
        cfg.macro_cfg = MacroConfig {
            stem_channels: 4,
            cells_per_stage: 1,
            num_classes: 4,
            input_hw: 8,
            input_channels: 2,
        };
        cfg.train.epochs = 2;
        cfg.train.batch_size = 8;
        cfg.qat.epochs = 1;
        cfg.hwt.train.epochs = 1;
        cfg.hw.eval_repeats = 2;
        cfg.calib_samples = 16;
        cfg
    }

    fn tiny_data(seed: u64) -> DatasetPair {
        synth_dataset(
            &SynthSpec {
                classes: 4,
                image_hw: 8,
                channels: 2,
                train_per_class: 8,
                test_per_class: 4,
                margin: 0.9,
            },
            seed,
        )
    }

    #[test]
    fn pipeline_is_bit_deterministic() {
        let cfg = tiny_cfg();
        let data = tiny_data(1);
        let enc = CellEncoding::from_index(ArchIndex(2_077)).unwrap();
        let a = run_full_pipeline(&enc, &data, &cfg, 5).unwrap();
        let b = run_full_pipeline(&enc, &data, &cfg, 5).unwrap();
        assert_eq!(a, b);
        let c = run_full_pipeline(&enc, &data, &cfg, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_hardware_gives_flat_drift_and_quantized_baseline() {
        let mut cfg = tiny_cfg();
        cfg.hw = HardwareConfig::noiseless();
        cfg.hw.eval_repeats = 2;
        let data = tiny_data(2);
        let enc = CellEncoding::from_codes([2, 0, 4, 3, 0, 2]).unwrap();
        let record = run_full_pipeline(&enc, &data, &cfg, 3).unwrap();
        // Noiseless analog equals the digital deployment of the same
        // weights; drift with nu = 0 is flat across all horizons.
        assert_eq!(record.noisy_acc.std, 0.0);
        for stat in &record.noisy_drift {
            assert_eq!(stat.mean, record.noisy_acc.mean);
        }
        for stat in &record.analog_drift {
            assert_eq!(stat.mean, record.analog_acc.mean);
        }
        assert!((record.noisy_acc.mean - record.baseline_acc).abs() <= 15.0);
    }

    #[test]
    fn conv_cell_beats_all_zeroize_cell() {
        let cfg = {
            let mut c = tiny_cfg();
            c.train.epochs = 4;
            c
        };
        let data = tiny_data(3);
        let conv = CellEncoding::from_codes([2, 2, 0, 2, 0, 2]).unwrap();
        let zero = CellEncoding::from_codes([1; 6]).unwrap();
        let conv_rec = run_full_pipeline(&conv, &data, &cfg, 11).unwrap();
        let zero_rec = run_full_pipeline(&zero, &data, &cfg, 11).unwrap();
        assert!(
            conv_rec.baseline_acc > zero_rec.baseline_acc,
            "conv {} vs zero {}",
            conv_rec.baseline_acc,
            zero_rec.baseline_acc
        );
        // The all-zeroize cell blinds the classifier: chance accuracy.
        assert!((zero_rec.baseline_acc - 25.0).abs() <= 15.0);
    }
}
