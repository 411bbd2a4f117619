//! Hardware-aware training: the digital training loop with injected weight
//! and output noise, so the network learns representations that survive the
//! analog non-idealities.

use serde::{Deserialize, Serialize};

use super::HardwareConfig;
use crate::nnet::train::{train_loop, EpochStats, NoiseInjection, TrainConfig};
use crate::nnet::{Dataset, Network, NnetError};

/// Hardware-aware training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwtConfig {
    /// Optimizer settings (SGD with cosine annealing, like digital training).
    pub train: TrainConfig,
    /// Additive weight-noise std as a fraction of each layer's max |w|.
    pub weight_eta: f64,
    /// Inject additive output noise matching the hardware output noise.
    pub inject_output_noise: bool,
}

impl HwtConfig {
    pub fn desk() -> Self {
        HwtConfig {
            train: TrainConfig::desk(),
            weight_eta: 0.1,
            inject_output_noise: true,
        }
    }
}

/// Trains a copy of `net` with per-forward Gaussian weight noise
/// (std `eta * max|w|` per layer) and additive output noise with the
/// hardware's relative sigma. Noise draws are constants to the backward
/// pass. With `eta = 0` and output noise off the trajectory is identical to
/// plain SGD training under the same config.
pub fn hwt_train(
    net: &Network<f32>,
    train: &Dataset,
    hw: &HardwareConfig,
    cfg: &HwtConfig,
    seed: u64,
) -> Result<(Network<f32>, Vec<EpochStats>), NnetError> {
    if cfg.weight_eta < 0.0 {
        return Err(NnetError::InvalidConfig("weight_eta must be >= 0".into()));
    }
    let mut hwt_net = net.clone();
    let noise = NoiseInjection {
        weight_eta: cfg.weight_eta,
        out_sigma: if cfg.inject_output_noise {
            hw.output_noise_sigma
        } else {
            0.0
        },
        noise_seed: seed,
    };
    let curve = train_loop(&mut hwt_net, train, &cfg.train, Some(&noise))?;
    Ok((hwt_net, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::data::{synth_dataset, SynthSpec};
    use crate::nnet::network::build_network;
    use crate::nnet::train::sgd_train;
    use crate::space::{CellEncoding, MacroConfig};

    #[test]
    fn zero_noise_hwt_matches_plain_sgd_trajectory() {
        let enc = CellEncoding::from_codes([2, 0, 3, 4, 0, 2]).unwrap();
        let mc = MacroConfig {
            stem_channels: 4,
            cells_per_stage: 1,
            num_classes: 3,
            input_hw: 8,
            input_channels: 2,
        };
        let pair = synth_dataset(
            &SynthSpec {
                classes: 3,
                image_hw: 8,
                channels: 2,
                train_per_class: 6,
                test_per_class: 3,
                margin: 0.8,
            },
            1,
        );
        let mut tc = TrainConfig::desk();
        tc.epochs = 2;
        tc.batch_size = 6;
        tc.seed = 7;
        let hw = HardwareConfig::default();

        let mut plain = build_network::<f32>(&enc, &mc, 5);
        let plain_curve = sgd_train(&mut plain, &pair.train, &tc).unwrap();

        let base = build_network::<f32>(&enc, &mc, 5);
        let cfg = HwtConfig {
            train: tc,
            weight_eta: 0.0,
            inject_output_noise: false,
        };
        let (hwt_net, hwt_curve) = hwt_train(&base, &pair.train, &hw, &cfg, 99).unwrap();
        assert_eq!(plain_curve, hwt_curve);

        let mut a = Vec::new();
        plain.visit_params(&mut |p| a.push(p.data.clone()));
        let mut b = Vec::new();
        let mut hwt_net = hwt_net;
        hwt_net.visit_params(&mut |p| b.push(p.data.clone()));
        assert_eq!(a, b);
    }

    #[test]
    fn hwt_with_noise_trains_and_differs_from_plain() {
        let enc = CellEncoding::from_codes([2, 2, 0, 4, 0, 3]).unwrap();
        let mc = MacroConfig {
            stem_channels: 4,
            cells_per_stage: 1,
            num_classes: 3,
            input_hw: 8,
            input_channels: 2,
        };
        let pair = synth_dataset(
            &SynthSpec {
                classes: 3,
                image_hw: 8,
                channels: 2,
                train_per_class: 8,
                test_per_class: 4,
                margin: 0.85,
            },
            2,
        );
        let mut tc = TrainConfig::desk();
        tc.epochs = 2;
        tc.batch_size = 8;
        tc.seed = 3;
        let hw = HardwareConfig::default();
        let base = build_network::<f32>(&enc, &mc, 8);
        let cfg = HwtConfig {
            train: tc.clone(),
            weight_eta: 0.1,
            inject_output_noise: true,
        };
        let (noisy_net, curve) = hwt_train(&base, &pair.train, &hw, &cfg, 4).unwrap();
        assert_eq!(curve.len(), 2);

        let mut plain = base.clone();
        sgd_train(&mut plain, &pair.train, &tc).unwrap();
        let mut a = Vec::new();
        plain.visit_params(&mut |p| a.push(p.data.clone()));
        let mut noisy_net = noisy_net;
        let mut b = Vec::new();
        noisy_net.visit_params(&mut |p| b.push(p.data.clone()));
        assert_ne!(a, b);

        // Same seeds reproduce the HWT trajectory exactly.
        let (_, curve2) = hwt_train(&base, &pair.train, &hw, &cfg, 4).unwrap();
        assert_eq!(curve, curve2);
    }
}
