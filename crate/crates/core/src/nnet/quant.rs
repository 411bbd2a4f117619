//! Int8 post-training quantization and quantization-aware training.
//!
//! Weights use per-tensor symmetric quantization (`scale = max|w| / 127`,
//! scale 1 for all-zero tensors); activations use per-tensor affine
//! quantization calibrated from min/max over calibration batches. Inference
//! runs on the dequantized path. QAT fake-quantizes in the forward pass and
//! propagates gradients with the straight-through estimator.

use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::layers::{Ctx, FqMode};
use super::network::Network;
use super::train::{argmax_row, softmax_cross_entropy, AdamState, EpochStats, ReduceLrOnPlateau};
use super::NnetError;
use crate::rng::stream_rng;
use rand::Rng;

/// Quantization scheme. Weight and activation bit widths default to 8.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantScheme {
    pub weight_bits: u32,
    pub act_bits: u32,
    /// Number of calibration batches (of `calib_batch_size`) observed.
    pub calib_batches: usize,
    pub calib_batch_size: usize,
}

impl Default for QuantScheme {
    fn default() -> Self {
        QuantScheme {
            weight_bits: 8,
            act_bits: 8,
            calib_batches: 4,
            calib_batch_size: 32,
        }
    }
}

impl QuantScheme {
    pub fn validate(&self) -> Result<(), NnetError> {
        for bits in [self.weight_bits, self.act_bits] {
            if !(2..=16).contains(&bits) {
                return Err(NnetError::InvalidConfig(format!(
                    "quantization bits {bits} outside 2..=16"
                )));
            }
        }
        if self.calib_batches == 0 || self.calib_batch_size == 0 {
            return Err(NnetError::InvalidConfig(
                "calibration needs at least one batch".into(),
            ));
        }
        Ok(())
    }
}

/// Runs calibration batches through the network with observers enabled.
fn calibrate(
    net: &mut Network<f32>,
    calib: &Dataset,
    scheme: &QuantScheme,
) -> Result<(), NnetError> {
    if calib.is_empty() {
        return Err(NnetError::EmptyDataset);
    }
    net.visit_fq(&mut |fq| {
        fq.bits = scheme.act_bits;
        fq.reset_observation();
        fq.mode = FqMode::Observe;
    });
    let mut start = 0usize;
    for _ in 0..scheme.calib_batches {
        if start >= calib.len() {
            break;
        }
        let count = scheme.calib_batch_size.min(calib.len() - start);
        let images = calib.images.batch_slice(start, count);
        let mut ctx = Ctx::inference();
        net.forward(&images, &mut ctx);
        start += count;
    }
    net.set_fq_mode(FqMode::Apply);
    Ok(())
}

/// Post-training quantization: returns a quantized view of the trained
/// network (frozen weight grids + calibrated activation quantizers). The
/// input network is untouched. Quantizing an already-quantized network is a
/// no-op clone, which makes the operation idempotent.
pub fn ptq_int8(
    net: &Network<f32>,
    calib: &Dataset,
    scheme: &QuantScheme,
) -> Result<Network<f32>, NnetError> {
    scheme.validate()?;
    let mut quantized = net.clone();
    if quantized.quantized {
        return Ok(quantized);
    }
    quantized.set_weight_quant(Some(scheme.weight_bits), true);
    calibrate(&mut quantized, calib, scheme)?;
    quantized.quantized = true;
    Ok(quantized)
}

/// Quantization-aware training configuration. The published recipe: Adam,
/// learning rate 1e-3, weight decay 1e-4, plateau-based LR reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QatConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub scheme: QuantScheme,
    pub seed: u64,
}

impl Default for QatConfig {
    fn default() -> Self {
        QatConfig {
            epochs: 3,
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            plateau_factor: 0.1,
            plateau_patience: 2,
            scheme: QuantScheme::default(),
            seed: 0,
        }
    }
}

/// Quantization-aware fine-tuning: fake-quantization in the forward pass,
/// straight-through gradients, Adam with plateau LR reduction. With zero
/// epochs the result is exactly [`ptq_int8`] of the input.
pub fn qat_train(
    net: &Network<f32>,
    train: &Dataset,
    cfg: &QatConfig,
) -> Result<(Network<f32>, Vec<EpochStats>), NnetError> {
    cfg.scheme.validate()?;
    if train.is_empty() {
        return Err(NnetError::EmptyDataset);
    }
    let mut qnet = net.clone();
    if !qnet.quantized {
        // Dynamic weight grids during training; activations calibrated once.
        qnet.set_weight_quant(Some(cfg.scheme.weight_bits), false);
        calibrate(&mut qnet, train, &cfg.scheme)?;
        qnet.quantized = true;
    }
    if cfg.epochs == 0 {
        // Freeze grids exactly as PTQ would.
        qnet.set_weight_quant(Some(cfg.scheme.weight_bits), true);
        return Ok((qnet, Vec::new()));
    }

    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(cfg.seed, "qat-shuffle", 0);
    let mut adam = AdamState::new(cfg.weight_decay);
    let mut sched = ReduceLrOnPlateau::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.lr;

    for epoch in 0..cfg.epochs {
        // Fisher-Yates, matching the SGD loop's shuffle stream style.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let images = gather(train, chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let mut ctx = Ctx::train();
            let logits = qnet.forward(&images, &mut ctx);
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                return Err(NnetError::Divergence { epoch });
            }
            epoch_loss += loss * labels.len() as f64;
            let [bn, k, _, _] = logits.shape();
            for s in 0..bn {
                if argmax_row(&logits.as_slice()[s * k..(s + 1) * k]) == labels[s] {
                    correct += 1;
                }
            }
            qnet.zero_grads();
            qnet.backward(&dlogits);
            adam.step(&mut qnet, lr);
        }
        let mean_loss = epoch_loss / n as f64;
        lr = sched.observe(mean_loss);
        curve.push(EpochStats {
            epoch,
            lr,
            loss: mean_loss,
            train_accuracy: correct as f64 / n as f64,
        });
    }
    // Pin the final grids so inference no longer tracks the weights.
    qnet.set_weight_quant(Some(cfg.scheme.weight_bits), true);
    Ok((qnet, curve))
}

fn gather(data: &Dataset, indices: &[usize]) -> super::Tensor4<f32> {
    let [_, c, h, w] = data.images.shape();
    let mut images = super::Tensor4::zeros([indices.len(), c, h, w]);
    for (slot, &idx) in indices.iter().enumerate() {
        images.sample_mut(slot).copy_from_slice(data.images.sample(idx));
    }
    images
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::data::{synth_dataset, SynthSpec};
    use crate::nnet::network::build_network;
    use crate::nnet::train::{evaluate_accuracy, sgd_train, TrainConfig};
    use crate::space::{CellEncoding, MacroConfig};

    fn small_setup() -> (Network<f32>, crate::nnet::data::DatasetPair) {
        let enc = CellEncoding::from_codes([2, 0, 3, 4, 0, 2]).unwrap();
        let mc = MacroConfig {
            stem_channels: 4,
            cells_per_stage: 1,
            num_classes: 4,
            input_hw: 8,
            input_channels: 2,
        };
        let pair = synth_dataset(
            &SynthSpec {
                classes: 4,
                image_hw: 8,
                channels: 2,
                train_per_class: 8,
                test_per_class: 4,
                margin: 0.9,
            },
            21,
        );
        let mut net = build_network::<f32>(&enc, &mc, 13);
        let mut cfg = TrainConfig::desk();
        cfg.epochs = 4;
        cfg.batch_size = 8;
        cfg.base_lr = 0.05;
        cfg.seed = 17;
        sgd_train(&mut net, &pair.train, &cfg).unwrap();
        (net, pair)
    }

    #[test]
    fn ptq_is_idempotent_and_close_to_baseline() {
        let (mut net, pair) = small_setup();
        let scheme = QuantScheme::default();
        let mut q1 = ptq_int8(&net, &pair.train, &scheme).unwrap();
        let mut q2 = ptq_int8(&q1, &pair.train, &scheme).unwrap();
        let x = pair.test.images.batch_slice(0, 4);
        let y1 = q1.forward(&x, &mut Ctx::inference());
        let y2 = q2.forward(&x, &mut Ctx::inference());
        assert_eq!(y1.as_slice(), y2.as_slice());

        let base = evaluate_accuracy(&mut net, &pair.test).unwrap();
        let quant = evaluate_accuracy(&mut q1, &pair.test).unwrap();
        assert!((base - quant).abs() <= 0.25, "base {base}, ptq {quant}");
    }

    #[test]
    fn qat_zero_epochs_equals_ptq() {
        let (net, pair) = small_setup();
        let scheme = QuantScheme::default();
        let mut cfg = QatConfig {
            epochs: 0,
            scheme,
            ..QatConfig::default()
        };
        cfg.seed = 3;
        let (mut qat_net, curve) = qat_train(&net, &pair.train, &cfg).unwrap();
        assert!(curve.is_empty());
        let mut ptq_net = ptq_int8(&net, &pair.train, &scheme).unwrap();
        let x = pair.test.images.batch_slice(0, 8);
        let a = qat_net.forward(&x, &mut Ctx::inference());
        let b = ptq_net.forward(&x, &mut Ctx::inference());
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn qat_trains_without_diverging_and_is_deterministic() {
        let (net, pair) = small_setup();
        let cfg = QatConfig {
            epochs: 2,
            seed: 5,
            ..QatConfig::default()
        };
        let (mut a, curve_a) = qat_train(&net, &pair.train, &cfg).unwrap();
        let (mut b, curve_b) = qat_train(&net, &pair.train, &cfg).unwrap();
        assert_eq!(curve_a, curve_b);
        let ea = evaluate_accuracy(&mut a, &pair.test).unwrap();
        let eb = evaluate_accuracy(&mut b, &pair.test).unwrap();
        assert_eq!(ea, eb);
    }
}
