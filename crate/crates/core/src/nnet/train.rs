//! Training loops: Nesterov-momentum SGD with cosine annealing, Adam with
//! plateau-based learning-rate reduction, softmax cross-entropy, and the
//! standard flip/pad-crop augmentations.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::layers::{Ctx, HwtNoise, Param};
use super::network::Network;
use super::{NnetError, Scalar, Tensor4};
use crate::rng::stream_rng;

/// SGD training recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    /// Nesterov momentum coefficient.
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Horizontal-flip probability (0 disables).
    pub hflip_p: f64,
    /// Pad-and-crop pixels (0 disables).
    pub pad_crop: usize,
    /// Whether the caller pre-normalized the data per channel. Recorded in
    /// provenance; normalization itself is dataset preprocessing so that
    /// train and test splits share it.
    pub normalize: bool,
    pub seed: u64,
}

impl TrainConfig {
    /// Minutes-scale defaults for the synthetic dataset (augmentation off).
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 10,
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            hflip_p: 0.0,
            pad_crop: 0,
            normalize: false,
            seed: 0,
        }
    }

    /// The published 200-epoch recipe (flip 0.5, pad 4, normalization on).
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 200,
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 256,
            hflip_p: 0.5,
            pad_crop: 4,
            normalize: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), NnetError> {
        if self.epochs < 1 {
            return Err(NnetError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.base_lr > 0.0) {
            return Err(NnetError::InvalidConfig("base_lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NnetError::InvalidConfig(
                "momentum must be in [0, 1)".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(NnetError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.hflip_p) {
            return Err(NnetError::InvalidConfig("hflip_p must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-epoch training curve entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_accuracy: f64,
}

/// Cosine annealing from `base_lr` at epoch 0 to exactly 0 at epoch `total`.
pub fn cosine_lr(base_lr: f64, epoch: usize, total: usize) -> f64 {
    let frac = epoch as f64 / total as f64;
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor4<T>,
    labels: &[usize],
) -> (f64, Tensor4<T>) {
    let [n, k, _, _] = logits.shape();
    assert_eq!(n, labels.len());
    let mut grad = Tensor4::zeros(logits.shape());
    let mut loss = 0.0f64;
    for s in 0..n {
        let row = &logits.as_slice()[s * k..(s + 1) * k];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let label = labels[s];
        loss -= (exps[label] / sum).ln();
        for j in 0..k {
            let softmax = exps[j] / sum;
            let indicator = if j == label { 1.0 } else { 0.0 };
            grad.as_mut_slice()[s * k + j] = T::from_f64((softmax - indicator) / n as f64);
        }
    }
    (loss / n as f64, grad)
}

/// Index of the largest logit; ties resolve to the lowest class index.
pub fn argmax_row<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

/// Nesterov-momentum SGD with decoupled-through-gradient weight decay
/// (`g = grad + wd * w`, `v = mu * v + g`, `w -= lr * (g + mu * v)`).
pub struct SgdState {
    velocity: Vec<Vec<f64>>,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdState {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        SgdState {
            velocity: Vec::new(),
            momentum,
            weight_decay,
        }
    }

    pub fn step<T: Scalar>(&mut self, net: &mut Network<T>, lr: f64) {
        let mut idx = 0usize;
        let velocity = &mut self.velocity;
        let (mu, wd) = (self.momentum, self.weight_decay);
        net.visit_params(&mut |p: &mut Param<T>| {
            if velocity.len() == idx {
                velocity.push(vec![0.0; p.len()]);
            }
            let v = &mut velocity[idx];
            for i in 0..p.len() {
                let g = p.grad[i].to_f64() + wd * p.data[i].to_f64();
                v[i] = mu * v[i] + g;
                let step = g + mu * v[i];
                p.data[i] = T::from_f64(p.data[i].to_f64() - lr * step);
            }
            idx += 1;
        });
    }
}

/// Adam with additive (L2-style) weight decay.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(weight_decay: f64) -> Self {
        AdamState {
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn step<T: Scalar>(&mut self, net: &mut Network<T>, lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let mut idx = 0usize;
        let (ms, vs) = (&mut self.m, &mut self.v);
        net.visit_params(&mut |p: &mut Param<T>| {
            if ms.len() == idx {
                ms.push(vec![0.0; p.len()]);
                vs.push(vec![0.0; p.len()]);
            }
            let m = &mut ms[idx];
            let v = &mut vs[idx];
            for i in 0..p.len() {
                let g = p.grad[i].to_f64() + wd * p.data[i].to_f64();
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                p.data[i] = T::from_f64(p.data[i].to_f64() - lr * update);
            }
            idx += 1;
        });
    }
}

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// improvement of the monitored value (lower is better).
#[derive(Debug, Clone)]
pub struct ReduceLrOnPlateau {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl ReduceLrOnPlateau {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        ReduceLrOnPlateau {
            lr,
            factor,
            patience,
            min_lr: 1e-6,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, metric: f64) -> f64 {
        if metric < self.best {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

/// Assembles one (possibly augmented) mini-batch.
fn make_batch(
    data: &Dataset,
    indices: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> (Tensor4<f32>, Vec<usize>) {
    let [_, c, h, w] = data.images.shape();
    let mut images = Tensor4::zeros([indices.len(), c, h, w]);
    let mut labels = Vec::with_capacity(indices.len());
    for (slot, &idx) in indices.iter().enumerate() {
        labels.push(data.labels[idx]);
        let src = data.images.sample(idx);
        let dst = images.sample_mut(slot);
        dst.copy_from_slice(src);

        let flip = cfg.hflip_p > 0.0 && rng.gen_bool(cfg.hflip_p);
        let (dy, dx) = if cfg.pad_crop > 0 {
            let p = cfg.pad_crop as i64;
            (rng.gen_range(-p..=p), rng.gen_range(-p..=p))
        } else {
            (0, 0)
        };
        if flip {
            for ch in 0..c {
                for y in 0..h {
                    let row = &mut dst[(ch * h + y) * w..(ch * h + y + 1) * w];
                    row.reverse();
                }
            }
        }
        if dy != 0 || dx != 0 {
            let mut shifted = vec![0.0f32; c * h * w];
            for ch in 0..c {
                for y in 0..h {
                    let sy = y as i64 + dy;
                    if sy < 0 || sy >= h as i64 {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as i64 + dx;
                        if sx < 0 || sx >= w as i64 {
                            continue;
                        }
                        shifted[(ch * h + y) * w + x] =
                            dst[(ch * h + sy as usize) * w + sx as usize];
                    }
                }
            }
            dst.copy_from_slice(&shifted);
        }
    }
    (images, labels)
}

// ---------------------------------------------------------------------------
// Training and evaluation
// ---------------------------------------------------------------------------

/// Optional hardware-noise injection for the shared training loop.
pub(crate) struct NoiseInjection {
    pub weight_eta: f64,
    pub out_sigma: f64,
    pub noise_seed: u64,
}

pub(crate) fn train_loop(
    net: &mut Network<f32>,
    train: &Dataset,
    cfg: &TrainConfig,
    noise: Option<&NoiseInjection>,
) -> Result<Vec<EpochStats>, NnetError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(NnetError::EmptyDataset);
    }
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = stream_rng(cfg.seed, "train-shuffle", 0);
    let mut sgd = SgdState::new(cfg.momentum, cfg.weight_decay);
    // A dedicated stream keeps the optimizer trajectory identical whether or
    // not noise injection is enabled with zero scales.
    let mut noise_rng = noise.map(|nz| stream_rng(nz.noise_seed, "hwt-noise", 0));

    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.base_lr, epoch, cfg.epochs);
        shuffle(&mut order, &mut shuffle_rng);
        let mut epoch_loss = 0.0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (images, labels) = make_batch(train, chunk, cfg, &mut shuffle_rng);
            let mut ctx = Ctx::train();
            if let (Some(nz), Some(rng)) = (noise, noise_rng.as_mut()) {
                if nz.weight_eta > 0.0 || nz.out_sigma > 0.0 {
                    ctx.hwt = Some(HwtNoise {
                        weight_eta: nz.weight_eta,
                        out_sigma: nz.out_sigma,
                        rng: rng.clone(),
                    });
                }
            }
            let logits = net.forward(&images, &mut ctx);
            // Persist the noise stream position across batches.
            if let (Some(hwt), Some(rng)) = (ctx.hwt.take(), noise_rng.as_mut()) {
                *rng = hwt.rng;
            }
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
            net.zero_grads();
            net.backward(&dlogits);
            sgd.step(net, lr);
        }
        curve.push(EpochStats {
            epoch,
            lr,
            loss: epoch_loss / n as f64,
            train_accuracy: correct as f64 / n as f64,
        });
    }
    Ok(curve)
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Trains in place with Nesterov SGD and cosine annealing; returns the
/// per-epoch loss/accuracy curve. Deterministic given `cfg.seed`.
pub fn sgd_train(
    net: &mut Network<f32>,
    train: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>, NnetError> {
    train_loop(net, train, cfg, None)
}

/// Top-1 accuracy in [0, 1] with batch-norm in inference mode.
pub fn evaluate_accuracy(net: &mut Network<f32>, test: &Dataset) -> Result<f64, NnetError> {
    if test.is_empty() {
        return Err(NnetError::EmptyDataset);
    }
    let n = test.len();
    let batch = 64usize.min(n);
    let mut correct = 0usize;
    let mut start = 0usize;
    while start < n {
        let count = batch.min(n - start);
        let images = test.images.batch_slice(start, count);
        let logits = net.forward(&images, &mut Ctx::inference());
        let [bn, k, _, _] = logits.shape();
        for s in 0..bn {
            if argmax_row(&logits.as_slice()[s * k..(s + 1) * k]) == test.labels[start + s] {
                correct += 1;
            }
        }
        start += count;
    }
    Ok(correct as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::data::{synth_dataset, SynthSpec};
    use crate::nnet::network::build_network;
    use crate::space::{CellEncoding, MacroConfig};

    #[test]
    fn cosine_schedule_hits_exact_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 10), 0.1);
        assert_eq!(cosine_lr(0.1, 10, 10), 0.0);
        let mid = cosine_lr(0.1, 5, 10);
        assert!((mid - 0.05).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_epoch_only_touches_running_stats() {
        let enc = CellEncoding::from_codes([2, 0, 4, 3, 0, 2]).unwrap();
        let mc = MacroConfig {
            stem_channels: 4,
            cells_per_stage: 1,
            num_classes: 4,
            input_hw: 8,
            input_channels: 3,
        };
        let data = synth_dataset(
            &SynthSpec {
                classes: 4,
                image_hw: 8,
                channels: 3,
                train_per_class: 4,
                test_per_class: 2,
                margin: 0.9,
            },
            1,
        );
        let mut net = build_network::<f32>(&enc, &mc, 2);
        let mut before = Vec::new();
        net.visit_params(&mut |p| before.push(p.data.clone()));
        let mut cfg = TrainConfig::desk();
        cfg.epochs = 1;
        cfg.base_lr = f64::MIN_POSITIVE; // validate() requires > 0
        cfg.seed = 3;
        // lr lands at MIN_POSITIVE * 1.0 at epoch 0; steps are denormal-level
        // and vanish in f32 parameters.
        sgd_train(&mut net, &data.train, &cfg).unwrap();
        let mut after = Vec::new();
        net.visit_params(&mut |p| after.push(p.data.clone()));
        assert_eq!(before, after);
    }

    #[test]
    fn training_fits_linearly_separable_synthetic_data() {
        let enc = CellEncoding::from_codes([2, 0, 0, 0, 0, 2]).unwrap();
        let mc = MacroConfig {
            stem_channels: 4,
            cells_per_stage: 1,
            num_classes: 2,
            input_hw: 8,
            input_channels: 1,
        };
        let data = synth_dataset(
            &SynthSpec {
                classes: 2,
                image_hw: 8,
                channels: 1,
                train_per_class: 16,
                test_per_class: 8,
                margin: 1.0,
            },
            7,
        );
        let mut net = build_network::<f32>(&enc, &mc, 1);
        let mut cfg = TrainConfig::desk();
        cfg.epochs = 10;
        cfg.base_lr = 0.05;
        cfg.batch_size = 8;
        cfg.seed = 5;
        let curve = sgd_train(&mut net, &data.train, &cfg).unwrap();
        assert!(
            curve.last().unwrap().train_accuracy >= 0.99,
            "train accuracy {:?}",
            curve.last().unwrap()
        );
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let enc = CellEncoding::from_codes([2, 1, 0, 4, 0, 3]).unwrap();
        let mc = MacroConfig {
            stem_channels: 4,
            cells_per_stage: 1,
            num_classes: 3,
            input_hw: 8,
            input_channels: 2,
        };
        let data = synth_dataset(
            &SynthSpec {
                classes: 3,
                image_hw: 8,
                channels: 2,
                train_per_class: 6,
                test_per_class: 3,
                margin: 0.8,
            },
            11,
        );
        let mut cfg = TrainConfig::desk();
        cfg.epochs = 2;
        cfg.seed = 9;
        let mut a = build_network::<f32>(&enc, &mc, 4);
        let mut b = build_network::<f32>(&enc, &mc, 4);
        let ca = sgd_train(&mut a, &data.train, &cfg).unwrap();
        let cb = sgd_train(&mut b, &data.train, &cfg).unwrap();
        assert_eq!(ca, cb);
        let ea = evaluate_accuracy(&mut a, &data.test).unwrap();
        let eb = evaluate_accuracy(&mut b, &data.test).unwrap();
        assert_eq!(ea, eb);
    }

    #[test]
    fn plateau_scheduler_reduces_after_patience() {
        let mut sched = ReduceLrOnPlateau::new(1.0, 0.1, 1);
        assert_eq!(sched.observe(1.0), 1.0); // improvement (from inf)
        assert_eq!(sched.observe(1.0), 1.0); // bad 1 <= patience
        let lr = sched.observe(1.0); // bad 2 -> reduce
        assert!((lr - 0.1).abs() < 1e-12);
    }

    #[test]
    fn evaluate_rejects_empty_dataset() {
        let enc = CellEncoding::from_codes([0; 6]).unwrap();
        let mc = MacroConfig {
            stem_channels: 4,
            cells_per_stage: 1,
            num_classes: 2,
            input_hw: 8,
            input_channels: 1,
        };
        let mut net = build_network::<f32>(&enc, &mc, 0);
        let empty = Dataset {
            images: Tensor4::zeros([0, 1, 8, 8]),
            labels: vec![],
            split: crate::nnet::data::SplitTag::Test,
            num_classes: 2,
        };
        assert!(matches!(
            evaluate_accuracy(&mut net, &empty),
            Err(NnetError::EmptyDataset)
        ));
    }
}
