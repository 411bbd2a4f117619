//! Datasets: a seeded synthetic class-pattern generator and the CIFAR-10
//! binary-batch loader.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnetError, Tensor4};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitTag {
    Train,
    Test,
}

/// A labeled image set.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor4<f32>,
    pub labels: Vec<usize>,
    pub split: SplitTag,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-channel mean and population std over all pixels.
    pub fn channel_stats(&self) -> (Vec<f32>, Vec<f32>) {
        let [n, c, h, w] = self.images.shape();
        let plane = h * w;
        let mut means = vec![0.0f32; c];
        let mut stds = vec![0.0f32; c];
        for ch in 0..c {
            let mut sum = 0.0f64;
            let mut sum_sq = 0.0f64;
            for s in 0..n {
                let base = (s * c + ch) * plane;
                for &v in &self.images.as_slice()[base..base + plane] {
                    sum += f64::from(v);
                    sum_sq += f64::from(v) * f64::from(v);
                }
            }
            let count = (n * plane) as f64;
            let mean = sum / count;
            let var = (sum_sq / count - mean * mean).max(0.0);
            means[ch] = mean as f32;
            stds[ch] = (var.sqrt() as f32).max(1e-6);
        }
        (means, stds)
    }

    /// Standardizes each channel in place with the given statistics (use the
    /// training split's stats for both splits).
    pub fn normalize_channels(&mut self, means: &[f32], stds: &[f32]) {
        let [n, c, h, w] = self.images.shape();
        let plane = h * w;
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                for v in &mut self.images.as_mut_slice()[base..base + plane] {
                    *v = (*v - means[ch]) / stds[ch];
                }
            }
        }
    }

    /// The first `count` samples (used for quantizer/bound calibration).
    pub fn take(&self, count: usize) -> Dataset {
        let count = count.min(self.len());
        Dataset {
            images: self.images.batch_slice(0, count),
            labels: self.labels[..count].to_vec(),
            split: self.split,
            num_classes: self.num_classes,
        }
    }
}

/// Train/test pair produced by the synthetic generator.
#[derive(Debug, Clone)]
pub struct DatasetPair {
    pub train: Dataset,
    pub test: Dataset,
}

/// Synthetic class-conditional pattern dataset.
///
/// Each class has a fixed smooth template (a bilinearly upsampled coarse
/// random grid). A sample is its class template, randomly shifted by up to
/// `floor(5 * (1 - margin))` pixels and perturbed with Gaussian pixel noise
/// of std `(1 - margin)`. `margin = 1` yields the pure templates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub image_hw: usize,
    pub channels: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Separability knob in [0, 1]; 1 = maximally separable.
    pub margin: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), NnetError> {
        if self.classes < 2 {
            return Err(NnetError::InvalidConfig("classes must be >= 2".into()));
        }
        if self.image_hw < 4 || self.channels == 0 {
            return Err(NnetError::InvalidConfig("bad image shape".into()));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(NnetError::InvalidConfig("empty split".into()));
        }
        if !(0.0..=1.0).contains(&self.margin) {
            return Err(NnetError::InvalidConfig("margin must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Bilinear upsample of a coarse grid to (hw x hw).
fn upsample(coarse: &[f32], side: usize, hw: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; hw * hw];
    let scale = side as f32 / hw as f32;
    for y in 0..hw {
        let fy = (y as f32 + 0.5) * scale - 0.5;
        let y0 = fy.floor().clamp(0.0, (side - 1) as f32) as usize;
        let y1 = (y0 + 1).min(side - 1);
        let wy = (fy - y0 as f32).clamp(0.0, 1.0);
        for x in 0..hw {
            let fx = (x as f32 + 0.5) * scale - 0.5;
            let x0 = fx.floor().clamp(0.0, (side - 1) as f32) as usize;
            let x1 = (x0 + 1).min(side - 1);
            let wx = (fx - x0 as f32).clamp(0.0, 1.0);
            let top = coarse[y0 * side + x0] * (1.0 - wx) + coarse[y0 * side + x1] * wx;
            let bot = coarse[y1 * side + x0] * (1.0 - wx) + coarse[y1 * side + x1] * wx;
            out[y * hw + x] = top * (1.0 - wy) + bot * wy;
        }
    }
    out
}

/// Generates the seeded synthetic dataset with disjoint train/test splits.
/// Bit-identical for identical (spec, seed).
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> DatasetPair {
    spec.validate().unwrap_or_else(|e| panic!("{e}"));
    let hw = spec.image_hw;
    let c = spec.channels;
    let mut template_rng = stream_rng(seed, "synth-templates", 0);

    // Smooth per-class templates in [-1, 1].
    let coarse_side = 4usize.min(hw);
    let templates: Vec<Vec<f32>> = (0..spec.classes)
        .map(|_| {
            let mut planes = Vec::with_capacity(c * hw * hw);
            for _ in 0..c {
                let coarse: Vec<f32> = (0..coarse_side * coarse_side)
                    .map(|_| template_rng.gen_range(-1.0f32..1.0))
                    .collect();
                planes.extend(upsample(&coarse, coarse_side, hw));
            }
            planes
        })
        .collect();

    let noise_std = (1.0 - spec.margin) as f32;
    let shift_max = (5.0 * (1.0 - spec.margin)).floor() as i64;

    let build = |per_class: usize, split: SplitTag, stream: &str| {
        let mut rng = stream_rng(seed, stream, 0);
        let total = per_class * spec.classes;
        let mut images = Tensor4::zeros([total, c, hw, hw]);
        let mut labels = Vec::with_capacity(total);
        for i in 0..total {
            let class = i % spec.classes;
            labels.push(class);
            let (dy, dx) = if shift_max > 0 {
                (
                    rng.gen_range(-shift_max..=shift_max),
                    rng.gen_range(-shift_max..=shift_max),
                )
            } else {
                (0, 0)
            };
            let template = &templates[class];
            let dst = images.sample_mut(i);
            for ch in 0..c {
                for y in 0..hw {
                    for x in 0..hw {
                        let sy = y as i64 + dy;
                        let sx = x as i64 + dx;
                        let base = if sy >= 0 && sy < hw as i64 && sx >= 0 && sx < hw as i64 {
                            template[(ch * hw + sy as usize) * hw + sx as usize]
                        } else {
                            0.0
                        };
                        let noise = if noise_std > 0.0 {
                            let g: f32 = rng.sample(rand_distr::StandardNormal);
                            g * noise_std
                        } else {
                            0.0
                        };
                        dst[(ch * hw + y) * hw + x] = base + noise;
                    }
                }
            }
        }
        Dataset {
            images,
            labels,
            split,
            num_classes: spec.classes,
        }
    };

    DatasetPair {
        train: build(spec.train_per_class, SplitTag::Train, "synth-train"),
        test: build(spec.test_per_class, SplitTag::Test, "synth-test"),
    }
}

const CIFAR_RECORD: usize = 3073;
const CIFAR_SIDE: usize = 32;

/// Loads one CIFAR-10 binary batch: records of 3073 bytes, 1 label byte then
/// 3072 pixel bytes (channel-major R,G,B; row-major 32x32). Pixels map to
/// [0, 1].
pub fn load_cifar10_binary(path: &Path, split: SplitTag) -> Result<Dataset, NnetError> {
    let bytes = std::fs::read(path)?;
    parse_cifar10(&bytes, split)
}

pub fn parse_cifar10(bytes: &[u8], split: SplitTag) -> Result<Dataset, NnetError> {
    if bytes.is_empty() {
        return Err(NnetError::Format {
            offset: 0,
            reason: "empty file".to_string(),
        });
    }
    if bytes.len() % CIFAR_RECORD != 0 {
        let offset = (bytes.len() / CIFAR_RECORD * CIFAR_RECORD) as u64;
        return Err(NnetError::Format {
            offset,
            reason: format!(
                "truncated record: {} trailing bytes (records are {CIFAR_RECORD} bytes)",
                bytes.len() % CIFAR_RECORD
            ),
        });
    }
    let count = bytes.len() / CIFAR_RECORD;
    let mut images = Tensor4::zeros([count, 3, CIFAR_SIDE, CIFAR_SIDE]);
    let mut labels = Vec::with_capacity(count);
    for rec in 0..count {
        let base = rec * CIFAR_RECORD;
        let label = bytes[base];
        if label > 9 {
            return Err(NnetError::Format {
                offset: base as u64,
                reason: format!("label byte {label} outside 0..10"),
            });
        }
        labels.push(label as usize);
        let dst = images.sample_mut(rec);
        for (i, &b) in bytes[base + 1..base + CIFAR_RECORD].iter().enumerate() {
            dst[i] = f32::from(b) / 255.0;
        }
    }
    Ok(Dataset {
        images,
        labels,
        split,
        num_classes: 10,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_is_bit_identical_per_seed() {
        let spec = SynthSpec {
            classes: 3,
            image_hw: 8,
            channels: 2,
            train_per_class: 4,
            test_per_class: 2,
            margin: 0.6,
        };
        let a = synth_dataset(&spec, 5);
        let b = synth_dataset(&spec, 5);
        assert_eq!(a.train.images.as_slice(), b.train.images.as_slice());
        assert_eq!(a.test.images.as_slice(), b.test.images.as_slice());
        assert_eq!(a.train.labels, b.train.labels);
        let c = synth_dataset(&spec, 6);
        assert_ne!(a.train.images.as_slice(), c.train.images.as_slice());
    }

    #[test]
    fn synth_at_max_margin_is_pure_templates() {
        let spec = SynthSpec {
            classes: 2,
            image_hw: 8,
            channels: 1,
            train_per_class: 3,
            test_per_class: 2,
            margin: 1.0,
        };
        let pair = synth_dataset(&spec, 9);
        // All samples of one class are identical.
        let first = pair.train.images.sample(0).to_vec();
        assert_eq!(pair.train.images.sample(2), &first[..]);
        assert_ne!(pair.train.images.sample(1), &first[..]);
    }

    #[test]
    fn cifar_parses_record_layout() {
        // Two records: label + channel-major pixels.
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD];
        bytes[0] = 7;
        bytes[1] = 255; // R plane, first pixel of record 0
        bytes[CIFAR_RECORD] = 3;
        let ds = parse_cifar10(&bytes, SplitTag::Train).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![7, 3]);
        assert_eq!(ds.images.at(0, 0, 0, 0), 1.0);
        assert_eq!(ds.images.at(0, 1, 0, 0), 0.0);
    }

    #[test]
    fn cifar_rejects_truncation_and_bad_labels() {
        let bytes = vec![0u8; CIFAR_RECORD + 10];
        match parse_cifar10(&bytes, SplitTag::Train) {
            Err(NnetError::Format { offset, .. }) => assert_eq!(offset, CIFAR_RECORD as u64),
            other => panic!("expected format error, got {other:?}"),
        }
        let mut bytes = vec![0u8; CIFAR_RECORD];
        bytes[0] = 10;
        assert!(matches!(
            parse_cifar10(&bytes, SplitTag::Train),
            Err(NnetError::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn normalization_zeroes_channel_means() {
        let spec = SynthSpec {
            classes: 2,
            image_hw: 8,
            channels: 2,
            train_per_class: 8,
            test_per_class: 2,
            margin: 0.7,
        };
        let mut pair = synth_dataset(&spec, 3);
        let (means, stds) = pair.train.channel_stats();
        pair.train.normalize_channels(&means, &stds);
        let (m2, s2) = pair.train.channel_stats();
        for ch in 0..2 {
            assert!(m2[ch].abs() < 1e-4);
            assert!((s2[ch] - 1.0).abs() < 1e-3);
        }
    }
}
