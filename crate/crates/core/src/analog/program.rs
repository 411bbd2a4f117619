//! Mapping a trained digital network onto per-layer crossbars.
//!
//! Batch norms fold into their preceding convolutions; each conv/affine
//! layer becomes a differential pair of conductance arrays with per-device
//! drift exponents. Pooling, ReLU, skips, node sums, and the head batch
//! norm (which has no preceding conv) stay digital.

use rand_chacha::ChaCha8Rng;

use super::sim::probe_readout;
use super::{AnalogError, HardwareConfig};
use crate::nnet::layers::{BatchNorm2d, Conv2d};
use crate::nnet::network::{EdgeOp, Network};
use crate::nnet::Scalar;
use crate::rng::stream_rng;
use crate::space::{CellEncoding, MacroConfig};

/// Convolution geometry of one analog unit. The head affine is a 1x1
/// convolution over a 1x1 spatial input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.out_channels
    }

    pub fn cols(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// One matrix unit within the network structure.
#[derive(Debug, Clone)]
pub struct Unit<P> {
    pub payload: P,
    pub geom: ConvGeom,
    /// Apply ReLU to the unit input (cell conv edges and reduction convs).
    pub relu_before: bool,
}

#[derive(Debug, Clone)]
pub enum EdgeSite<P> {
    Skip,
    Zeroize,
    Conv(Unit<P>),
    Pool,
}

#[derive(Debug, Clone)]
pub struct CellSite<P> {
    pub edges: Vec<EdgeSite<P>>,
}

#[derive(Debug, Clone)]
pub struct BlockSite<P> {
    pub conv_a: Unit<P>,
    pub conv_b: Unit<P>,
    /// Downsample conv; a 2x2/стride-2 average pool runs before it.
    pub down: Unit<P>,
}

#[derive(Debug, Clone)]
pub struct HeadSite<P> {
    /// Inference-mode batch norm as a per-channel digital affine.
    pub bn_scale: Vec<f64>,
    pub bn_shift: Vec<f64>,
    pub linear: Unit<P>,
}

/// The macro-network skeleton with a payload per matrix unit.
#[derive(Debug, Clone)]
pub struct Structure<P> {
    pub encoding: CellEncoding,
    pub macro_cfg: MacroConfig,
    pub stem: Unit<P>,
    pub stages: Vec<Vec<CellSite<P>>>,
    pub reductions: Vec<BlockSite<P>>,
    pub head: HeadSite<P>,
}

impl<P> Structure<P> {
    /// Number of matrix units (stem + cell convs + reduction convs + head).
    pub fn unit_count(&self) -> usize {
        let mut count = 0;
        self.for_each_unit(&mut |_| count += 1);
        count
    }

    /// Visits units in execution order (the same order the forward walker
    /// uses to assign unit indices).
    pub fn for_each_unit<'a>(&'a self, f: &mut dyn FnMut(&'a Unit<P>)) {
        f(&self.stem);
        for stage in 0..3 {
            for cell in &self.stages[stage] {
                for edge in &cell.edges {
                    if let EdgeSite::Conv(unit) = edge {
                        f(unit);
                    }
                }
            }
            if stage < 2 {
                let block = &self.reductions[stage];
                f(&block.conv_a);
                f(&block.conv_b);
                f(&block.down);
            }
        }
        f(&self.head.linear);
    }

    /// Consumes the structure, mapping each unit payload in execution order.
    pub fn map_units<Q>(self, f: &mut dyn FnMut(usize, Unit<P>) -> Unit<Q>) -> Structure<Q> {
        let mut idx = 0usize;
        let mut conv = |unit: Unit<P>, f: &mut dyn FnMut(usize, Unit<P>) -> Unit<Q>| {
            let mapped = f(idx, unit);
            idx += 1;
            mapped
        };
        let stem = conv(self.stem, f);
        let mut stages = Vec::new();
        let mut reductions = Vec::new();
        let mut stage_iter = self.stages.into_iter();
        let mut red_iter = self.reductions.into_iter();
        for stage in 0..3 {
            let cells = stage_iter
                .next()
                .expect("3 stages")
                .into_iter()
                .map(|cell| CellSite {
                    edges: cell
                        .edges
                        .into_iter()
                        .map(|edge| match edge {
                            EdgeSite::Skip => EdgeSite::Skip,
                            EdgeSite::Zeroize => EdgeSite::Zeroize,
                            EdgeSite::Pool => EdgeSite::Pool,
                            EdgeSite::Conv(unit) => EdgeSite::Conv(conv(unit, f)),
                        })
                        .collect(),
                })
                .collect();
            stages.push(cells);
            if stage < 2 {
                let block = red_iter.next().expect("2 reductions");
                reductions.push(BlockSite {
                    conv_a: conv(block.conv_a, f),
                    conv_b: conv(block.conv_b, f),
                    down: conv(block.down, f),
                });
            }
        }
        let head = HeadSite {
            bn_scale: self.head.bn_scale,
            bn_shift: self.head.bn_shift,
            linear: conv(self.head.linear, f),
        };
        Structure {
            encoding: self.encoding,
            macro_cfg: self.macro_cfg,
            stem,
            stages,
            reductions,
            head,
        }
    }
}

/// Ideal folded weights of one unit (row-major rows x cols) plus the
/// digital bias carried out of the batch-norm fold.
#[derive(Debug, Clone)]
pub struct FoldedUnit {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub bn_folded: bool,
}

fn fold_conv_bn<T: Scalar>(
    conv: &Conv2d<T>,
    bn: Option<&BatchNorm2d<T>>,
) -> Result<FoldedUnit, AnalogError> {
    let rows = conv.out_channels;
    let cols = conv.in_channels * conv.kernel * conv.kernel;
    let mut weights = vec![0.0f64; rows * cols];
    let mut bias = vec![0.0f64; rows];
    match bn {
        Some(bn) => {
            for o in 0..rows {
                let var = bn.running_var[o].to_f64();
                if !var.is_finite() || var < 0.0 {
                    return Err(AnalogError::UnsupportedLayer(
                        "batch norm with invalid running variance cannot be folded".into(),
                    ));
                }
                let inv_std = 1.0 / (var + bn.eps).sqrt();
                let scale = bn.gamma.data[o].to_f64() * inv_std;
                for j in 0..cols {
                    weights[o * cols + j] = conv.weight.data[o * cols + j].to_f64() * scale;
                }
                bias[o] = bn.beta.data[o].to_f64() - scale * bn.running_mean[o].to_f64();
            }
        }
        None => {
            for (dst, src) in weights.iter_mut().zip(conv.weight.data.iter()) {
                *dst = src.to_f64();
            }
        }
    }
    Ok(FoldedUnit {
        weights,
        bias,
        bn_folded: bn.is_some(),
    })
}

/// Extracts the folded digital structure of a trained network.
pub(crate) fn fold_network(net: &Network<f32>) -> Result<Structure<FoldedUnit>, AnalogError> {
    let geom_of = |conv: &Conv2d<f32>| ConvGeom {
        in_channels: conv.in_channels,
        out_channels: conv.out_channels,
        kernel: conv.kernel,
        stride: conv.stride,
        pad: conv.pad,
    };

    let stem = Unit {
        payload: fold_conv_bn(&net.stem.conv, Some(&net.stem.bn))?,
        geom: geom_of(&net.stem.conv),
        relu_before: false,
    };
    let mut stages = Vec::new();
    let mut reductions = Vec::new();
    for stage in 0..3 {
        let mut cells = Vec::new();
        for cell in &net.stages[stage] {
            let mut edges = Vec::new();
            for (i, edge) in cell.edges.iter().enumerate() {
                let site = match edge {
                    EdgeOp::Skip => EdgeSite::Skip,
                    EdgeOp::Zeroize { .. } => EdgeSite::Zeroize,
                    EdgeOp::Pool(_) => EdgeSite::Pool,
                    EdgeOp::Conv(op) => EdgeSite::Conv(Unit {
                        payload: fold_conv_bn(&op.conv, Some(&op.bn))?,
                        geom: geom_of(&op.conv),
                        relu_before: true,
                    }),
                };
                debug_assert!(i < 6);
                edges.push(site);
            }
            cells.push(CellSite { edges });
        }
        stages.push(cells);
        if stage < 2 {
            let block = &net.reductions[stage];
            reductions.push(BlockSite {
                conv_a: Unit {
                    payload: fold_conv_bn(&block.conv_a.conv, Some(&block.conv_a.bn))?,
                    geom: geom_of(&block.conv_a.conv),
                    relu_before: true,
                },
                conv_b: Unit {
                    payload: fold_conv_bn(&block.conv_b.conv, Some(&block.conv_b.bn))?,
                    geom: geom_of(&block.conv_b.conv),
                    relu_before: true,
                },
                down: Unit {
                    payload: fold_conv_bn(&block.down_conv, None)?,
                    geom: geom_of(&block.down_conv),
                    relu_before: false,
                },
            });
        }
    }

    let (bn_scale, bn_shift) = net.head.bn.inference_affine();
    let f = net.head.linear.in_features;
    let k = net.head.linear.out_features;
    let mut weights = vec![0.0f64; k * f];
    for (dst, src) in weights.iter_mut().zip(net.head.linear.weight.data.iter()) {
        *dst = f64::from(*src);
    }
    let head = HeadSite {
        bn_scale: bn_scale.iter().map(|&v| f64::from(v)).collect(),
        bn_shift: bn_shift.iter().map(|&v| f64::from(v)).collect(),
        linear: Unit {
            payload: FoldedUnit {
                weights,
                bias: net.head.linear.bias.data.iter().map(|&v| f64::from(v)).collect(),
                bn_folded: false,
            },
            geom: ConvGeom {
                in_channels: f,
                out_channels: k,
                kernel: 1,
                stride: 1,
                pad: 0,
            },
            relu_before: false,
        },
    };

    Ok(Structure {
        encoding: net.encoding,
        macro_cfg: net.macro_cfg.clone(),
        stem,
        stages,
        reductions,
        head,
    })
}

/// One crossbar: differential conductance pairs, per-device drift
/// exponents, converter bounds, and the drift-compensation reference.
#[derive(Debug, Clone)]
pub struct ProgrammedLayer {
    pub rows: usize,
    pub cols: usize,
    /// Conductances in [0, g_max], microsiemens, row-major.
    pub g_plus: Vec<f64>,
    pub g_minus: Vec<f64>,
    /// Per-device drift exponents (>= 0).
    pub nu_plus: Vec<f64>,
    pub nu_minus: Vec<f64>,
    /// Per-layer weight scale: |w| = w_max maps to g_max.
    pub w_max: f64,
    pub g_max: f64,
    /// Programming time (seconds).
    pub t0: f64,
    /// DAC clip bound on input activations.
    pub dac_bound: f64,
    /// ADC clip bound on pre-bias outputs (weight units).
    pub adc_bound: f64,
    /// Digital per-row shift applied after the ADC (folded BN or bias).
    pub bias: Vec<f64>,
    /// All-ones probe readout at programming time.
    pub comp_reference: f64,
    /// Set when the probe readout was zero; compensation is then off.
    pub comp_disabled: bool,
    pub bn_folded: bool,
}

impl ProgrammedLayer {
    /// Programs a weight matrix onto a crossbar: one-sided differential
    /// targets `g = g_max |w| / w_max`, conductance-dependent Gaussian
    /// programming noise on the programmed device only (the complementary
    /// device of the pair stays at zero), per-device truncated-normal drift
    /// exponents, and the compensation reference readout.
    #[allow(clippy::too_many_arguments)]
    pub fn program(
        weights: &[f64],
        rows: usize,
        cols: usize,
        bias: Vec<f64>,
        dac_bound: f64,
        adc_bound: f64,
        hw: &HardwareConfig,
        rng: &mut ChaCha8Rng,
    ) -> ProgrammedLayer {
        assert_eq!(weights.len(), rows * cols);
        assert_eq!(bias.len(), rows);
        let max_abs = weights.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let w_max = if max_abs > 0.0 { max_abs } else { 1.0 };
        let g_max = hw.g_max;

        let n = rows * cols;
        let mut g_plus = vec![0.0f64; n];
        let mut g_minus = vec![0.0f64; n];
        let mut nu_plus = vec![0.0f64; n];
        let mut nu_minus = vec![0.0f64; n];
        for i in 0..n {
            let w = weights[i];
            let target = g_max * w.abs() / w_max;
            if w != 0.0 {
                let mut g = target;
                if hw.prog_noise_scale > 0.0 {
                    let sigma =
                        hw.prog_noise_scale * g_max * (hw.prog_noise_a0 + hw.prog_noise_a1 * target / g_max);
                    g += f64::gauss(rng) * sigma;
                }
                let g = g.clamp(0.0, g_max);
                if w > 0.0 {
                    g_plus[i] = g;
                } else {
                    g_minus[i] = g;
                }
            }
            nu_plus[i] = truncated_normal(hw.drift_nu_mean, hw.drift_nu_std, rng);
            nu_minus[i] = truncated_normal(hw.drift_nu_mean, hw.drift_nu_std, rng);
        }

        let mut layer = ProgrammedLayer {
            rows,
            cols,
            g_plus,
            g_minus,
            nu_plus,
            nu_minus,
            w_max,
            g_max,
            t0: hw.drift_t0_seconds,
            dac_bound,
            adc_bound,
            bias,
            comp_reference: 0.0,
            comp_disabled: false,
            bn_folded: false,
        };
        let reference = probe_readout(&layer.g_plus, &layer.g_minus, layer.rows, layer.cols);
        layer.comp_reference = reference;
        layer.comp_disabled = reference <= 0.0;
        layer
    }

    /// Weight-unit reconstruction of the programmed matrix (no drift/noise).
    pub fn effective_weights(&self) -> Vec<f64> {
        let scale = self.w_max / self.g_max;
        self.g_plus
            .iter()
            .zip(self.g_minus.iter())
            .map(|(&p, &m)| (p - m) * scale)
            .collect()
    }
}

fn truncated_normal(mean: f64, std: f64, rng: &mut ChaCha8Rng) -> f64 {
    if std == 0.0 {
        return mean.max(0.0);
    }
    loop {
        let v = mean + std * f64::gauss(rng);
        if v >= 0.0 {
            return v;
        }
    }
}

/// A digital network programmed onto per-layer crossbars.
#[derive(Debug, Clone)]
pub struct ProgrammedNetwork {
    pub structure: Structure<ProgrammedLayer>,
    pub hw: HardwareConfig,
    /// Seed the programming noise and drift exponents were drawn with.
    pub seed: u64,
}

impl ProgrammedNetwork {
    pub fn encoding(&self) -> CellEncoding {
        self.structure.encoding
    }

    pub fn t0(&self) -> f64 {
        self.hw.drift_t0_seconds
    }

    /// Layers in execution order.
    pub fn layers(&self) -> Vec<&ProgrammedLayer> {
        let mut out = Vec::new();
        self.structure.for_each_unit(&mut |unit| out.push(&unit.payload));
        out
    }

    /// True when any layer had a zero probe readout at programming time.
    pub fn any_compensation_disabled(&self) -> bool {
        self.layers().iter().any(|l| l.comp_disabled)
    }
}

/// Folds batch norms, calibrates per-layer converter bounds on `calib`, and
/// programs every conv/affine layer. Deterministic per seed.
pub fn program_network(
    net: &Network<f32>,
    calib: &crate::nnet::Dataset,
    hw: &HardwareConfig,
    seed: u64,
) -> Result<ProgrammedNetwork, AnalogError> {
    hw.validate()?;
    if calib.is_empty() {
        return Err(AnalogError::EmptyDataset);
    }
    let folded = fold_network(net)?;
    let (in_bounds, out_bounds) = super::sim::calibrate_bounds(&folded, &calib.images);

    let mut rng = stream_rng(seed, "programming", 0);
    let structure = folded.map_units(&mut |idx, unit: Unit<FoldedUnit>| {
        let rows = unit.geom.rows();
        let cols = unit.geom.cols();
        let dac_bound = in_bounds[idx];
        let max_abs = unit.payload.weights.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let w_max = if max_abs > 0.0 { max_abs } else { 1.0 };
        let adc_bound = match hw.adc_bound_mode {
            super::AdcBoundMode::Calibrated => out_bounds[idx],
            super::AdcBoundMode::FixedColumns => cols as f64 * w_max * dac_bound,
        };
        let bn_folded = unit.payload.bn_folded;
        let mut layer = ProgrammedLayer::program(
            &unit.payload.weights,
            rows,
            cols,
            unit.payload.bias.clone(),
            dac_bound,
            adc_bound,
            hw,
            &mut rng,
        );
        layer.bn_folded = bn_folded;
        Unit {
            payload: layer,
            geom: unit.geom,
            relu_before: unit.relu_before,
        }
    });

    Ok(ProgrammedNetwork {
        structure,
        hw: hw.clone(),
        seed,
    })
}
