//! Analog inference: the per-layer matvec pipeline and whole-network
//! evaluation.
//!
//! Per-layer pipeline, in order: DAC (clip + uniform quantize the inputs),
//! conductance drift to the evaluation time, per-access read noise, ideal
//! differential MVM, additive output noise, ADC (clip + quantize), global
//! drift-compensation factor, digital bias. All math runs in weight units:
//! the differential conductances are rescaled by `w_max / g_max` up front,
//! which commutes with every step of the pipeline.

use rand_chacha::ChaCha8Rng;

use super::program::{EdgeSite, ProgrammedLayer, ProgrammedNetwork, Structure, Unit};
use super::{AnalogError, HardwareConfig};
use crate::nnet::layers::{conv_out_size, im2col, matmul};
use crate::nnet::train::argmax_row;
use crate::nnet::{Dataset, Scalar, Tensor4};
use crate::rng::stream_rng;

/// Power-law conductance decay `G * (t / t0)^(-nu)`.
pub fn apply_drift(g: f64, nu: f64, t: f64, t0: f64) -> Result<f64, AnalogError> {
    if t < t0 {
        return Err(AnalogError::DriftRange { t, t0 });
    }
    Ok(g * (t / t0).powf(-nu))
}

/// All-ones-probe readout magnitude: sum of |row sums| of the differential
/// array. Units cancel in the compensation ratio.
pub(crate) fn probe_readout(g_plus: &[f64], g_minus: &[f64], rows: usize, cols: usize) -> f64 {
    let mut total = 0.0f64;
    for r in 0..rows {
        let mut row = 0.0f64;
        for c in 0..cols {
            let i = r * cols + c;
            row += g_plus[i] - g_minus[i];
        }
        total += row.abs();
    }
    total
}

/// Global drift-compensation factor `alpha(t)`: the probe readout at
/// programming time over the same probe through the noiselessly drifted
/// array. 1 when compensation was disabled for the layer.
pub fn compensation_factor(layer: &ProgrammedLayer, t: f64) -> Result<f64, AnalogError> {
    if t < layer.t0 {
        return Err(AnalogError::DriftRange { t, t0: layer.t0 });
    }
    if layer.comp_disabled {
        return Ok(1.0);
    }
    let n = layer.rows * layer.cols;
    let mut gp = vec![0.0f64; n];
    let mut gm = vec![0.0f64; n];
    for i in 0..n {
        gp[i] = apply_drift(layer.g_plus[i], layer.nu_plus[i], t, layer.t0)?;
        gm[i] = apply_drift(layer.g_minus[i], layer.nu_minus[i], t, layer.t0)?;
    }
    let readout = probe_readout(&gp, &gm, layer.rows, layer.cols);
    if readout <= 0.0 {
        return Ok(1.0);
    }
    Ok(layer.comp_reference / readout)
}

/// Symmetric uniform quantization to `bits` with zero exactly representable
/// (`2^bits - 1` levels, step `bound / (2^(bits-1) - 1)`). `bits = 0` is an
/// ideal converter; a non-positive bound clips everything to zero.
pub fn quantize_symmetric(v: f64, bound: f64, bits: u32) -> f64 {
    if bound <= 0.0 {
        return 0.0;
    }
    let clipped = v.clamp(-bound, bound);
    if bits == 0 {
        return clipped;
    }
    let step = bound / ((1u64 << (bits - 1)) - 1) as f64;
    (clipped / step).round() * step
}

/// Per-repeat working state of one layer: drifted conductances in weight
/// units, with the compensation factor for the evaluation time.
struct DriftedLayer {
    gp: Vec<f64>,
    gm: Vec<f64>,
    weight_scale: f64,
    alpha: f64,
}

fn drift_layer(layer: &ProgrammedLayer, t: f64, hw: &HardwareConfig) -> Result<DriftedLayer, AnalogError> {
    let n = layer.rows * layer.cols;
    let mut gp = vec![0.0f64; n];
    let mut gm = vec![0.0f64; n];
    for i in 0..n {
        gp[i] = apply_drift(layer.g_plus[i], layer.nu_plus[i], t, layer.t0)?;
        gm[i] = apply_drift(layer.g_minus[i], layer.nu_minus[i], t, layer.t0)?;
    }
    let alpha = if hw.global_drift_compensation {
        compensation_factor(layer, t)?
    } else {
        1.0
    };
    Ok(DriftedLayer {
        gp,
        gm,
        weight_scale: layer.w_max / layer.g_max,
        alpha,
    })
}

/// Noisy effective weight matrix for one access: read-noise-perturbed,
/// clamped conductances rescaled to weight units.
fn access_weights(
    drifted: &DriftedLayer,
    layer: &ProgrammedLayer,
    hw: &HardwareConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n = drifted.gp.len();
    let mut w = vec![0.0f64; n];
    let sigma = hw.read_noise_scale * hw.read_noise_b0 * layer.g_max;
    if sigma > 0.0 {
        for i in 0..n {
            let p = (drifted.gp[i] + f64::gauss(rng) * sigma).clamp(0.0, layer.g_max);
            let m = (drifted.gm[i] + f64::gauss(rng) * sigma).clamp(0.0, layer.g_max);
            w[i] = (p - m) * drifted.weight_scale;
        }
    } else {
        for i in 0..n {
            w[i] = (drifted.gp[i] - drifted.gm[i]) * drifted.weight_scale;
        }
    }
    w
}

/// Runs the output side of the pipeline in place: output noise, ADC,
/// compensation, bias.
fn finish_outputs(
    out: &mut [f64],
    rows: usize,
    hw_cols: usize,
    layer: &ProgrammedLayer,
    alpha: f64,
    hw: &HardwareConfig,
    rng: &mut ChaCha8Rng,
) {
    let noise_std = hw.output_noise_sigma * layer.adc_bound;
    for r in 0..rows {
        let row = &mut out[r * hw_cols..(r + 1) * hw_cols];
        let bias = layer.bias[r];
        for v in row.iter_mut() {
            let mut y = *v;
            if noise_std > 0.0 {
                y += f64::gauss(rng) * noise_std;
            }
            y = quantize_symmetric(y, layer.adc_bound, hw.adc_bits);
            *v = y * alpha + bias;
        }
    }
}

/// One analog matrix-vector product through a programmed layer at time `t`.
/// Each call is one crossbar access: fresh read and output noise.
pub fn analog_matvec(
    layer: &ProgrammedLayer,
    x: &[f64],
    hw: &HardwareConfig,
    t: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, AnalogError> {
    assert_eq!(x.len(), layer.cols);
    let drifted = drift_layer(layer, t, hw)?;
    let weights = access_weights(&drifted, layer, hw, rng);
    let dac: Vec<f64> = x
        .iter()
        .map(|&v| quantize_symmetric(v, layer.dac_bound, hw.dac_bits))
        .collect();
    let mut out = vec![0.0f64; layer.rows];
    matmul(&weights, &dac, layer.rows, layer.cols, 1, &mut out);
    finish_outputs(&mut out, layer.rows, 1, layer, drifted.alpha, hw, rng);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Whole-network execution
// ---------------------------------------------------------------------------

/// Walks the macro-structure on a batch, calling `exec` for every matrix
/// unit in execution order. `exec(idx, unit, input) -> output`.
fn forward_structure<P>(
    s: &Structure<P>,
    images: &Tensor4<f64>,
    exec: &mut dyn FnMut(usize, &Unit<P>, &Tensor4<f64>) -> Tensor4<f64>,
) -> Tensor4<f64> {
    let mut idx = 0usize;
    let mut run = |unit: &Unit<P>,
                   x: &Tensor4<f64>,
                   exec: &mut dyn FnMut(usize, &Unit<P>, &Tensor4<f64>) -> Tensor4<f64>| {
        let input = if unit.relu_before { relu(x) } else { x.clone() };
        let out = exec(idx, unit, &input);
        idx += 1;
        out
    };

    let mut x = run(&s.stem, images, exec);
    for stage in 0..3 {
        for cell in &s.stages[stage] {
            let node1 = edge_forward(&cell.edges[0], &x, &mut run, exec);
            let a02 = edge_forward(&cell.edges[1], &x, &mut run, exec);
            let a12 = edge_forward(&cell.edges[2], &node1, &mut run, exec);
            let node2 = add(&a02, &a12);
            let a03 = edge_forward(&cell.edges[3], &x, &mut run, exec);
            let a13 = edge_forward(&cell.edges[4], &node1, &mut run, exec);
            let a23 = edge_forward(&cell.edges[5], &node2, &mut run, exec);
            x = add(&add(&a03, &a13), &a23);
        }
        if stage < 2 {
            let block = &s.reductions[stage];
            let main = run(&block.conv_a, &x, exec);
            let main = run(&block.conv_b, &main, exec);
            let down_in = avg_pool(&x, 2, 2, 0);
            let res = run(&block.down, &down_in, exec);
            x = add(&main, &res);
        }
    }
    // Head: digital BN affine, ReLU, global average pool, affine unit.
    let x = bn_affine(&x, &s.head.bn_scale, &s.head.bn_shift);
    let x = relu(&x);
    let x = global_avg_pool(&x);
    run(&s.head.linear, &x, exec)
}

fn edge_forward<P>(
    edge: &EdgeSite<P>,
    x: &Tensor4<f64>,
    run: &mut dyn FnMut(
        &Unit<P>,
        &Tensor4<f64>,
        &mut dyn FnMut(usize, &Unit<P>, &Tensor4<f64>) -> Tensor4<f64>,
    ) -> Tensor4<f64>,
    exec: &mut dyn FnMut(usize, &Unit<P>, &Tensor4<f64>) -> Tensor4<f64>,
) -> Tensor4<f64> {
    match edge {
        EdgeSite::Skip => x.clone(),
        EdgeSite::Zeroize => Tensor4::zeros(x.shape()),
        EdgeSite::Pool => avg_pool(x, 3, 1, 1),
        EdgeSite::Conv(unit) => run(unit, x, exec),
    }
}

fn relu(x: &Tensor4<f64>) -> Tensor4<f64> {
    x.map(|v| v.max(0.0))
}

fn add(a: &Tensor4<f64>, b: &Tensor4<f64>) -> Tensor4<f64> {
    let mut out = a.clone();
    for (o, &v) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o += v;
    }
    out
}

fn bn_affine(x: &Tensor4<f64>, scale: &[f64], shift: &[f64]) -> Tensor4<f64> {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let mut out = x.clone();
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            for v in &mut out.as_mut_slice()[base..base + plane] {
                *v = *v * scale[ch] + shift[ch];
            }
        }
    }
    out
}

fn global_avg_pool(x: &Tensor4<f64>) -> Tensor4<f64> {
    let [n, c, h, w] = x.shape();
    let plane = (h * w) as f64;
    let mut out = Tensor4::zeros([n, c, 1, 1]);
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * h * w;
            let sum: f64 = x.as_slice()[base..base + h * w].iter().sum();
            *out.at_mut(s, ch, 0, 0) = sum / plane;
        }
    }
    out
}

/// Average pooling with count_include_pad = false, matching the digital
/// engine's pooling.
fn avg_pool(x: &Tensor4<f64>, kernel: usize, stride: usize, pad: usize) -> Tensor4<f64> {
    let [n, c, h, w] = x.shape();
    let oh = conv_out_size(h, kernel, stride, pad);
    let ow = conv_out_size(w, kernel, stride, pad);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    for s in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let y0 = (oy * stride) as isize - pad as isize;
                    let x0 = (ox * stride) as isize - pad as isize;
                    let y_lo = y0.max(0) as usize;
                    let x_lo = x0.max(0) as usize;
                    let y_hi = ((y0 + kernel as isize).min(h as isize)) as usize;
                    let x_hi = ((x0 + kernel as isize).min(w as isize)) as usize;
                    let mut acc = 0.0f64;
                    for iy in y_lo..y_hi {
                        for ix in x_lo..x_hi {
                            acc += x.at(s, ch, iy, ix);
                        }
                    }
                    let cnt = ((y_hi - y_lo) * (x_hi - x_lo)) as f64;
                    *out.at_mut(s, ch, oy, ox) = acc / cnt;
                }
            }
        }
    }
    out
}

/// Ideal conv/affine unit application used for bound calibration.
fn ideal_unit(
    weights: &[f64],
    bias: &[f64],
    geom: &super::program::ConvGeom,
    x: &Tensor4<f64>,
) -> (Tensor4<f64>, f64, f64) {
    let [n, c, h, w] = x.shape();
    debug_assert_eq!(c, geom.in_channels);
    let oh = conv_out_size(h, geom.kernel, geom.stride, geom.pad);
    let ow = conv_out_size(w, geom.kernel, geom.stride, geom.pad);
    let hw = oh * ow;
    let k_rows = geom.cols();
    let mut out = Tensor4::zeros([n, geom.out_channels, oh, ow]);
    let mut cols = vec![0.0f64; k_rows * hw];
    let mut in_bound = 0.0f64;
    let mut out_bound = 0.0f64;
    for s in 0..n {
        im2col(x.sample(s), c, h, w, geom.kernel, geom.stride, geom.pad, &mut cols);
        for &v in &cols {
            in_bound = in_bound.max(v.abs());
        }
        matmul(weights, &cols, geom.out_channels, k_rows, hw, out.sample_mut(s));
        for &v in out.sample(s) {
            out_bound = out_bound.max(v.abs());
        }
        for r in 0..geom.out_channels {
            let base = (s * geom.out_channels + r) * hw;
            for v in &mut out.as_mut_slice()[base..base + hw] {
                *v += bias[r];
            }
        }
    }
    (out, in_bound, out_bound)
}

/// Runs the folded digital network over the calibration images, returning
/// per-unit (input, pre-bias output) magnitude bounds in execution order.
pub(crate) fn calibrate_bounds(
    folded: &Structure<super::program::FoldedUnit>,
    images: &Tensor4<f32>,
) -> (Vec<f64>, Vec<f64>) {
    let count = folded.unit_count();
    let mut in_bounds = vec![0.0f64; count];
    let mut out_bounds = vec![0.0f64; count];
    let images = to_f64(images);
    forward_structure(folded, &images, &mut |idx, unit, x| {
        let (out, in_b, out_b) = ideal_unit(&unit.payload.weights, &unit.payload.bias, &unit.geom, x);
        in_bounds[idx] = in_bounds[idx].max(in_b);
        out_bounds[idx] = out_bounds[idx].max(out_b);
        out
    });
    (in_bounds, out_bounds)
}

fn to_f64(images: &Tensor4<f32>) -> Tensor4<f64> {
    Tensor4::from_vec(
        images.shape(),
        images.as_slice().iter().map(|&v| f64::from(v)).collect(),
    )
}

/// One noisy analog forward pass over a batch. Each matrix unit is one
/// crossbar access per call: read noise is drawn once per unit, output
/// noise per output element.
fn analog_forward(
    pnet: &ProgrammedNetwork,
    drifted: &[DriftedLayer],
    images: &Tensor4<f64>,
    hw: &HardwareConfig,
    rng: &mut ChaCha8Rng,
) -> Tensor4<f64> {
    forward_structure(&pnet.structure, images, &mut |idx, unit, x| {
        let layer = &unit.payload;
        let dl = &drifted[idx];
        let weights = access_weights(dl, layer, hw, rng);
        let [n, c, h, w] = x.shape();
        let oh = conv_out_size(h, unit.geom.kernel, unit.geom.stride, unit.geom.pad);
        let ow = conv_out_size(w, unit.geom.kernel, unit.geom.stride, unit.geom.pad);
        let hw_cols = oh * ow;
        let k_rows = unit.geom.cols();
        let mut out = Tensor4::zeros([n, unit.geom.out_channels, oh, ow]);
        let mut cols = vec![0.0f64; k_rows * hw_cols];
        for s in 0..n {
            im2col(x.sample(s), c, h, w, unit.geom.kernel, unit.geom.stride, unit.geom.pad, &mut cols);
            for v in &mut cols {
                *v = quantize_symmetric(*v, layer.dac_bound, hw.dac_bits);
            }
            matmul(&weights, &cols, layer.rows, k_rows, hw_cols, out.sample_mut(s));
            finish_outputs(out.sample_mut(s), layer.rows, hw_cols, layer, dl.alpha, hw, rng);
        }
        out
    })
}

/// Evaluation batch size; fixed so that access granularity (and therefore
/// the noise stream) does not depend on dataset size.
const EVAL_BATCH: usize = 64;

/// Mean and population std of top-1 accuracy over `hw.eval_repeats`
/// independent noisy evaluations at drift time `t` (use `t = t0` for the
/// undrifted accuracy). Programming noise and drift exponents are fixed in
/// the programmed network; each repeat redraws read and output noise.
pub fn analog_evaluate(
    pnet: &ProgrammedNetwork,
    test: &Dataset,
    hw: &HardwareConfig,
    t: f64,
    seed: u64,
) -> Result<(f64, f64), AnalogError> {
    hw.validate()?;
    if test.is_empty() {
        return Err(AnalogError::EmptyDataset);
    }
    let layers = pnet.layers();
    let mut drifted = Vec::with_capacity(layers.len());
    for layer in &layers {
        drifted.push(drift_layer(layer, t, hw)?);
    }
    let images = to_f64(&test.images);
    let n = test.len();

    let mut accs = Vec::with_capacity(hw.eval_repeats);
    for repeat in 0..hw.eval_repeats {
        let mut rng = stream_rng(seed, "analog-eval", repeat as u64);
        let mut correct = 0usize;
        let mut start = 0usize;
        while start < n {
            let count = EVAL_BATCH.min(n - start);
            let batch = images.batch_slice(start, count);
            let logits = analog_forward(pnet, &drifted, &batch, hw, &mut rng);
            let [bn, k, _, _] = logits.shape();
            for s in 0..bn {
                if argmax_row(&logits.as_slice()[s * k..(s + 1) * k]) == test.labels[start + s] {
                    correct += 1;
                }
            }
            start += count;
        }
        accs.push(correct as f64 / n as f64);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / accs.len() as f64;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analog::program::program_network;
    use crate::nnet::data::{synth_dataset, SynthSpec};
    use crate::nnet::layers::Ctx;
    use crate::nnet::network::build_network;
    use crate::nnet::train::{evaluate_accuracy, sgd_train, TrainConfig};
    use crate::rng::rng_from_seed;
    use crate::space::{ArchIndex, CellEncoding, MacroConfig};

    #[test]
    fn drift_law_fixture() {
        // 10 * 100^(-0.06) = 7.5858...
        let g = apply_drift(10.0, 0.06, 100.0, 1.0).unwrap();
        let expected = 10.0 * 100.0f64.powf(-0.06);
        assert!((g - expected).abs() / expected <= 1e-12);
        assert_eq!(apply_drift(5.0, 0.0, 777.0, 1.0).unwrap(), 5.0);
        assert_eq!(apply_drift(5.0, 0.3, 20.0, 20.0).unwrap(), 5.0);
        assert!(matches!(
            apply_drift(5.0, 0.1, 1.0, 20.0),
            Err(AnalogError::DriftRange { .. })
        ));
    }

    #[test]
    fn quantizer_keeps_zero_exact_and_bounds_error() {
        assert_eq!(quantize_symmetric(0.0, 1.0, 8), 0.0);
        assert_eq!(quantize_symmetric(5.0, 1.0, 8), 1.0);
        assert_eq!(quantize_symmetric(-5.0, 1.0, 8), -1.0);
        let step = 1.0 / 127.0;
        let mut rng = rng_from_seed(1);
        for _ in 0..1000 {
            let v = f64::gauss(&mut rng);
            let q = quantize_symmetric(v, 1.0, 8);
            if v.abs() <= 1.0 {
                assert!((v - q).abs() <= step / 2.0 + 1e-15);
            }
        }
        // Ideal converter passes through (up to clipping).
        assert_eq!(quantize_symmetric(0.123456789, 1.0, 0), 0.123456789);
    }

    #[test]
    fn noiseless_matvec_matches_digital_reference() {
        let hw = HardwareConfig {
            dac_bits: 16,
            adc_bits: 16,
            ..HardwareConfig::noiseless()
        };
        let mut rng = rng_from_seed(3);
        for _ in 0..20 {
            let rows = 8;
            let cols = 32;
            let weights: Vec<f64> = (0..rows * cols).map(|_| f64::gauss(&mut rng)).collect();
            let x: Vec<f64> = (0..cols).map(|_| f64::gauss(&mut rng)).collect();
            let digital: Vec<f64> = (0..rows)
                .map(|r| (0..cols).map(|c| weights[r * cols + c] * x[c]).sum())
                .collect();
            let dac_bound = x.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            let adc_bound = digital.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            let layer = ProgrammedLayer::program(
                &weights,
                rows,
                cols,
                vec![0.0; rows],
                dac_bound,
                adc_bound,
                &hw,
                &mut rng,
            );
            let mut call_rng = rng_from_seed(9);
            let out =
                analog_matvec(&layer, &x, &hw, hw.drift_t0_seconds, &mut call_rng).unwrap();
            let full_range = 2.0 * adc_bound;
            let tol = full_range * 2.0f64.powi(-15);
            for (a, d) in out.iter().zip(digital.iter()) {
                assert!((a - d).abs() <= tol, "analog {a} digital {d} tol {tol}");
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_output_without_output_noise() {
        let hw = HardwareConfig {
            output_noise_sigma: 0.0,
            ..HardwareConfig::default()
        };
        let mut rng = rng_from_seed(4);
        let weights: Vec<f64> = (0..64).map(|_| f64::gauss(&mut rng)).collect();
        let layer =
            ProgrammedLayer::program(&weights, 8, 8, vec![0.0; 8], 1.0, 10.0, &hw, &mut rng);
        let x = vec![0.0f64; 8];
        let out = analog_matvec(&layer, &x, &hw, hw.drift_t0_seconds, &mut rng).unwrap();
        // Read noise perturbs conductances, but zero inputs null the MVM.
        assert!(out.iter().all(|&v| v == 0.0), "{out:?}");
    }

    #[test]
    fn output_variance_scales_with_output_noise_sigma_squared() {
        let mut base = HardwareConfig::noiseless();
        base.adc_bits = 0;
        base.dac_bits = 0;
        let mut rng = rng_from_seed(5);
        let weights: Vec<f64> = (0..256).map(|_| f64::gauss(&mut rng)).collect();
        let x: Vec<f64> = (0..16).map(|_| f64::gauss(&mut rng)).collect();
        let sigmas = [0.01, 0.02, 0.04, 0.08];
        let mut variances = Vec::new();
        for &sigma in &sigmas {
            let hw = HardwareConfig {
                output_noise_sigma: sigma,
                ..base.clone()
            };
            let layer = ProgrammedLayer::program(
                &weights,
                16,
                16,
                vec![0.0; 16],
                2.0,
                20.0,
                &hw,
                &mut rng_from_seed(6),
            );
            let mut call_rng = rng_from_seed(7);
            let mut samples = Vec::new();
            for _ in 0..400 {
                let out =
                    analog_matvec(&layer, &x, &hw, hw.drift_t0_seconds, &mut call_rng).unwrap();
                samples.push(out[0]);
            }
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / samples.len() as f64;
            variances.push(var);
        }
        // var ~ sigma^2: regression of var against sigma^2 should be tight.
        let xs: Vec<f64> = sigmas.iter().map(|s| s * s).collect();
        let mean_x = xs.iter().sum::<f64>() / 4.0;
        let mean_y = variances.iter().sum::<f64>() / 4.0;
        let sxy: f64 = xs.iter().zip(&variances).map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mean_x) * (x - mean_x)).sum();
        let syy: f64 = variances.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
        let r2 = (sxy * sxy) / (sxx * syy);
        assert!(r2 >= 0.99, "R^2 = {r2}, variances {variances:?}");
    }

    #[test]
    fn homogeneous_nu_compensation_restores_outputs() {
        // Identical nu on every device: alpha(t) = (t/t0)^nu exactly and
        // compensated noiseless outputs equal the undrifted ones.
        let mut hw = HardwareConfig::noiseless();
        hw.drift_nu_mean = 0.06;
        hw.drift_nu_std = 0.0;
        let mut rng = rng_from_seed(8);
        let weights: Vec<f64> = (0..128).map(|_| f64::gauss(&mut rng)).collect();
        let x: Vec<f64> = (0..16).map(|_| f64::gauss(&mut rng)).collect();
        let layer =
            ProgrammedLayer::program(&weights, 8, 16, vec![0.0; 8], 3.0, 30.0, &hw, &mut rng);
        let t = hw.drift_t0_seconds * 12_345.0;
        let alpha = compensation_factor(&layer, t).unwrap();
        let expected = (t / hw.drift_t0_seconds).powf(0.06);
        assert!((alpha - expected).abs() / expected <= 1e-12);

        let mut rng_a = rng_from_seed(11);
        let mut rng_b = rng_from_seed(11);
        let undrifted = analog_matvec(&layer, &x, &hw, hw.drift_t0_seconds, &mut rng_a).unwrap();
        let drifted = analog_matvec(&layer, &x, &hw, t, &mut rng_b).unwrap();
        for (a, b) in undrifted.iter().zip(drifted.iter()) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn evaluate_is_deterministic_and_noiseless_equals_digital() {
        let enc = CellEncoding::from_index(ArchIndex(4_321)).unwrap();
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
                test_per_class: 6,
                margin: 0.9,
            },
            31,
        );
        let mut net = build_network::<f32>(&enc, &mc, 17);
        let mut cfg = TrainConfig::desk();
        cfg.epochs = 3;
        cfg.batch_size = 8;
        cfg.seed = 23;
        sgd_train(&mut net, &pair.train, &cfg).unwrap();

        let mut hw = HardwareConfig::noiseless();
        hw.eval_repeats = 3;
        let pnet = program_network(&net, &pair.train, &hw, 7).unwrap();
        let (mean, std) = analog_evaluate(&pnet, &pair.test, &hw, hw.drift_t0_seconds, 5).unwrap();
        assert_eq!(std, 0.0);
        let digital = evaluate_accuracy(&mut net, &pair.test).unwrap();
        assert!((mean - digital).abs() < 1e-9, "analog {mean} digital {digital}");

        // Same seed, same result; also a noisy config is repeat-stable.
        let hw2 = HardwareConfig {
            eval_repeats: 4,
            ..HardwareConfig::default()
        };
        let pnet2 = program_network(&net, &pair.train, &hw2, 7).unwrap();
        let a = analog_evaluate(&pnet2, &pair.test, &hw2, 60.0, 5).unwrap();
        let b = analog_evaluate(&pnet2, &pair.test, &hw2, 60.0, 5).unwrap();
        assert_eq!(a, b);
        let c = analog_evaluate(&pnet2, &pair.test, &hw2, 60.0, 6).unwrap();
        let _ = c;
    }

    #[test]
    fn forward_structure_matches_digital_network_noiselessly() {
        // End-to-end: the folded-and-programmed noiseless analog network
        // must reproduce the digital network's decisions on real data.
        let enc = CellEncoding::from_codes([2, 0, 4, 3, 0, 2]).unwrap();
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
                test_per_class: 4,
                margin: 0.85,
            },
            13,
        );
        let mut net = build_network::<f32>(&enc, &mc, 3);
        let mut cfg = TrainConfig::desk();
        cfg.epochs = 2;
        cfg.batch_size = 6;
        cfg.seed = 2;
        sgd_train(&mut net, &pair.train, &cfg).unwrap();

        let hw = HardwareConfig::noiseless();
        let pnet = program_network(&net, &pair.train, &hw, 1).unwrap();
        let images = to_f64(&pair.test.images);
        let layers = pnet.layers();
        let drifted: Vec<DriftedLayer> = layers
            .iter()
            .map(|l| drift_layer(l, hw.drift_t0_seconds, &hw).unwrap())
            .collect();
        let mut rng = rng_from_seed(0);
        let analog_logits = analog_forward(&pnet, &drifted, &images, &hw, &mut rng);
        let digital_logits = net.forward(&pair.test.images, &mut Ctx::inference());
        let [n, k, _, _] = digital_logits.shape();
        for s in 0..n {
            for j in 0..k {
                let a = analog_logits.at(s, j, 0, 0);
                let d = f64::from(digital_logits.at(s, j, 0, 0));
                assert!((a - d).abs() < 1e-4, "sample {s} class {j}: {a} vs {d}");
            }
        }
    }
}
