//! Network primitives with explicit forward/backward passes.
//!
//! Each layer owns its parameters, gradients, and whatever activation cache
//! its backward pass needs. Backward must be called after forward on the
//! same input and consumes the cache.

use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tensor4};

/// A parameter tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub data: Vec<T>,
    pub grad: Vec<T>,
    pub shape: Vec<usize>,
}

impl<T: Scalar> Param<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        let grad = vec![T::ZERO; data.len()];
        Param { data, grad, shape }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Param::new(shape, vec![T::ZERO; len])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::ZERO);
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::ZERO, |m, &v| m.max(v.abs()))
    }
}

/// Hardware-aware-training noise injection state.
///
/// Weight noise is additive per forward pass with std `eta * max|w|` per
/// layer; output noise is additive with std `out_sigma * max|out|` of the
/// current activation. Both draws are treated as constants by backward.
#[derive(Debug)]
pub struct HwtNoise {
    pub weight_eta: f64,
    pub out_sigma: f64,
    pub rng: ChaCha8Rng,
}

/// Per-forward execution context.
#[derive(Debug)]
pub struct Ctx {
    /// Train mode: batch-norm batch statistics, caches retained.
    pub training: bool,
    pub hwt: Option<HwtNoise>,
}

impl Ctx {
    pub fn inference() -> Self {
        Ctx {
            training: false,
            hwt: None,
        }
    }

    pub fn train() -> Self {
        Ctx {
            training: true,
            hwt: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Matrix kernels
// ---------------------------------------------------------------------------

/// `out = a (m x k) * b (k x n)`, all row-major.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.iter_mut().for_each(|v| *v = T::ZERO);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += a_ip * bv;
            }
        }
    }
}

/// `out = a (m x k) * b^T (k x n)` where `b` is stored as `n x k` row-major.
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::ZERO;
            for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                acc += av * bv;
            }
            *o = acc;
        }
    }
}

/// `out = a^T (m x k) * b (k x n)` where `a` is stored as `k x m` row-major.
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.iter_mut().for_each(|v| *v = T::ZERO);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// Output spatial size of a convolution/pooling dimension.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Unfolds one sample (c x h x w) into a (c*k*k) x (oh*ow) column matrix.
pub fn im2col<T: Scalar>(
    sample: &[T],
    channels: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out: &mut [T],
) {
    let oh = conv_out_size(h, kernel, stride, pad);
    let ow = conv_out_size(w, kernel, stride, pad);
    let cols = oh * ow;
    debug_assert_eq!(out.len(), channels * kernel * kernel * cols);
    let mut row = 0usize;
    for c in 0..channels {
        let plane = &sample[c * h * w..(c + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let out_row = &mut out[row * cols..(row + 1) * cols];
                let mut idx = 0usize;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        for _ in 0..ow {
                            out_row[idx] = T::ZERO;
                            idx += 1;
                        }
                        continue;
                    }
                    let line = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        out_row[idx] = if ix < 0 || ix >= w as isize {
                            T::ZERO
                        } else {
                            line[ix as usize]
                        };
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds a column-matrix gradient back onto the input sample layout.
#[allow(clippy::too_many_arguments)]
pub fn col2im_add<T: Scalar>(
    cols_grad: &[T],
    channels: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out: &mut [T],
) {
    let oh = conv_out_size(h, kernel, stride, pad);
    let ow = conv_out_size(w, kernel, stride, pad);
    let cols = oh * ow;
    let mut row = 0usize;
    for c in 0..channels {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let grad_row = &cols_grad[row * cols..(row + 1) * cols];
                let mut idx = 0usize;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        idx += ow;
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += grad_row[idx];
                        }
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Fake quantization
// ---------------------------------------------------------------------------

/// Observation/application state of an activation quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FqMode {
    Off,
    /// Record min/max of everything that flows through.
    Observe,
    /// Quantize-dequantize with the frozen affine parameters.
    Apply,
}

/// Per-tensor affine activation fake-quantizer.
#[derive(Debug, Clone)]
pub struct FakeQuant<T> {
    pub mode: FqMode,
    pub bits: u32,
    pub lo: T,
    pub hi: T,
    observed: bool,
    /// Straight-through mask of the last Apply forward (training only).
    mask: Vec<bool>,
}

impl<T: Scalar> FakeQuant<T> {
    pub fn new(bits: u32) -> Self {
        FakeQuant {
            mode: FqMode::Off,
            bits,
            lo: T::ZERO,
            hi: T::ZERO,
            observed: false,
            mask: Vec::new(),
        }
    }

    pub fn reset_observation(&mut self) {
        self.observed = false;
        self.lo = T::ZERO;
        self.hi = T::ZERO;
    }

    fn levels(&self) -> f64 {
        (1u64 << self.bits) as f64 - 1.0
    }

    /// Affine scale; 1 for a degenerate (constant) observed range.
    pub fn scale(&self) -> T {
        let range = (self.hi - self.lo).to_f64();
        if range > 0.0 {
            T::from_f64(range / self.levels())
        } else {
            T::ONE
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>, training: bool) -> Tensor4<T> {
        match self.mode {
            FqMode::Off => x.clone(),
            FqMode::Observe => {
                for &v in x.as_slice() {
                    if !self.observed {
                        self.lo = v;
                        self.hi = v;
                        self.observed = true;
                    } else {
                        self.lo = self.lo.min(v);
                        self.hi = self.hi.max(v);
                    }
                }
                x.clone()
            }
            FqMode::Apply => {
                let scale = self.scale().to_f64();
                let lo = self.lo.to_f64();
                let hi = self.hi.to_f64();
                let levels = self.levels();
                if training {
                    self.mask = x.as_slice().iter().map(|v| {
                        let v = v.to_f64();
                        (lo..=hi).contains(&v)
                    }).collect();
                }
                x.map(|v| {
                    let q = ((v.to_f64() - lo) / scale).round().clamp(0.0, levels);
                    T::from_f64(lo + q * scale)
                })
            }
        }
    }

    /// Straight-through estimate: pass-through inside the observed range,
    /// zero outside.
    pub fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        if self.mode != FqMode::Apply {
            return dy.clone();
        }
        assert_eq!(self.mask.len(), dy.len(), "backward without forward");
        let mut out = dy.clone();
        for (g, &keep) in out.as_mut_slice().iter_mut().zip(self.mask.iter()) {
            if !keep {
                *g = T::ZERO;
            }
        }
        out
    }
}

/// Symmetric per-tensor weight quantization: `scale = max|w| / (2^(b-1)-1)`,
/// scale 1 for an all-zero tensor.
pub fn weight_quant_scale<T: Scalar>(weights: &[T], bits: u32) -> T {
    let qmax = ((1u64 << (bits - 1)) - 1) as f64;
    let max_abs = weights.iter().fold(T::ZERO, |m, &v| m.max(v.abs()));
    if max_abs > T::ZERO {
        T::from_f64(max_abs.to_f64() / qmax)
    } else {
        T::ONE
    }
}

/// Quantize-dequantize weights onto the symmetric integer grid.
pub fn fake_quant_weights<T: Scalar>(weights: &[T], bits: u32, scale: T) -> Vec<T> {
    let qmax = ((1u64 << (bits - 1)) - 1) as f64;
    let s = scale.to_f64();
    weights
        .iter()
        .map(|&w| T::from_f64((w.to_f64() / s).round().clamp(-qmax, qmax) * s))
        .collect()
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// 2-D convolution without bias (batch norm provides the shift).
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// When set, weights are fake-quantized each forward; `frozen_scale`
    /// pins the grid (PTQ), otherwise the scale tracks the live weights.
    pub weight_bits: Option<u32>,
    pub frozen_scale: Option<T>,
    cache_cols: Vec<T>,
    cache_in_shape: [usize; 4],
    cache_w_eff: Option<Vec<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        let data = (0..out_channels * fan_in)
            .map(|_| T::from_f64(T::gauss(rng).to_f64() * std))
            .collect();
        Conv2d {
            weight: Param::new(vec![out_channels, in_channels, kernel, kernel], data),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            weight_bits: None,
            frozen_scale: None,
            cache_cols: Vec::new(),
            cache_in_shape: [0; 4],
            cache_w_eff: None,
        }
    }

    /// The weights actually used in the forward pass (after fake quant and
    /// HWT noise), or `None` when they equal the stored weights.
    fn effective_weights(&self, ctx: &mut Ctx) -> Option<Vec<T>> {
        let mut w: Option<Vec<T>> = None;
        if let Some(bits) = self.weight_bits {
            let scale = self
                .frozen_scale
                .unwrap_or_else(|| weight_quant_scale(&self.weight.data, bits));
            w = Some(fake_quant_weights(&self.weight.data, bits, scale));
        }
        if let Some(hwt) = ctx.hwt.as_mut() {
            if hwt.weight_eta > 0.0 {
                let base = w.as_deref().unwrap_or(&self.weight.data);
                let std = self.weight.max_abs().to_f64() * hwt.weight_eta;
                w = Some(
                    base.iter()
                        .map(|&v| T::from_f64(v.to_f64() + T::gauss(&mut hwt.rng).to_f64() * std))
                        .collect(),
                );
            }
        }
        w
    }

    pub fn out_shape(&self, in_shape: [usize; 4]) -> [usize; 4] {
        let oh = conv_out_size(in_shape[2], self.kernel, self.stride, self.pad);
        let ow = conv_out_size(in_shape[3], self.kernel, self.stride, self.pad);
        [in_shape[0], self.out_channels, oh, ow]
    }

    pub fn forward(&mut self, x: &Tensor4<T>, ctx: &mut Ctx) -> Tensor4<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels);
        let out_shape = self.out_shape(x.shape());
        let (oh, ow) = (out_shape[2], out_shape[3]);
        let hw = oh * ow;
        let k_rows = self.in_channels * self.kernel * self.kernel;

        let w_eff = self.effective_weights(ctx);
        let weights = w_eff.as_deref().unwrap_or(&self.weight.data);

        let mut out = Tensor4::zeros(out_shape);
        let mut cols = vec![T::ZERO; n * k_rows * hw];
        for s in 0..n {
            let col = &mut cols[s * k_rows * hw..(s + 1) * k_rows * hw];
            im2col(x.sample(s), c, h, w, self.kernel, self.stride, self.pad, col);
            matmul(weights, col, self.out_channels, k_rows, hw, out.sample_mut(s));
        }

        if ctx.training {
            self.cache_cols = cols;
            self.cache_in_shape = x.shape();
            self.cache_w_eff = w_eff;
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        let [n, c, h, w] = self.cache_in_shape;
        let k_rows = self.in_channels * self.kernel * self.kernel;
        let (oh, ow) = (dy.shape()[2], dy.shape()[3]);
        let hw = oh * ow;
        assert_eq!(self.cache_cols.len(), n * k_rows * hw, "backward without forward");

        let weights: &[T] = self.cache_w_eff.as_deref().unwrap_or(&self.weight.data);
        let mut dx = Tensor4::zeros([n, c, h, w]);
        let mut dcols = vec![T::ZERO; k_rows * hw];
        let mut dw = vec![T::ZERO; self.weight.len()];
        let mut dw_s = vec![T::ZERO; self.weight.len()];
        for s in 0..n {
            let col = &self.cache_cols[s * k_rows * hw..(s + 1) * k_rows * hw];
            // dW += dY * cols^T
            matmul_nt(dy.sample(s), col, self.out_channels, hw, k_rows, &mut dw_s);
            for (acc, &v) in dw.iter_mut().zip(dw_s.iter()) {
                *acc += v;
            }
            // dcols = W^T * dY
            matmul_tn(weights, dy.sample(s), k_rows, self.out_channels, hw, &mut dcols);
            col2im_add(
                &dcols,
                c,
                h,
                w,
                self.kernel,
                self.stride,
                self.pad,
                dx.sample_mut(s),
            );
        }
        // Straight-through for quantized weights: the gradient w.r.t. the
        // dequantized weights passes to the stored weights unchanged (the
        // dynamic symmetric scale never clips).
        for (g, &v) in self.weight.grad.iter_mut().zip(dw.iter()) {
            *g += v;
        }
        self.cache_cols = Vec::new();
        dx
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    channels: usize,
    cache_xhat: Vec<T>,
    cache_inv_std: Vec<T>,
    cache_shape: [usize; 4],
    cache_eval_mode: bool,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(vec![channels], vec![T::ONE; channels]),
            beta: Param::new(vec![channels], vec![T::ZERO; channels]),
            running_mean: vec![T::ZERO; channels],
            running_var: vec![T::ONE; channels],
            momentum: 0.1,
            eps: 1e-5,
            channels,
            cache_xhat: Vec::new(),
            cache_inv_std: Vec::new(),
            cache_shape: [0; 4],
            cache_eval_mode: false,
        }
    }

    /// Per-channel affine equivalent in inference mode:
    /// `y = scale * x + shift`.
    pub fn inference_affine(&self) -> (Vec<T>, Vec<T>) {
        let mut scale = Vec::with_capacity(self.channels);
        let mut shift = Vec::with_capacity(self.channels);
        for c in 0..self.channels {
            let inv_std =
                T::from_f64(1.0 / (self.running_var[c].to_f64() + self.eps).sqrt());
            let s = self.gamma.data[c] * inv_std;
            scale.push(s);
            shift.push(self.beta.data[c] - s * self.running_mean[c]);
        }
        (scale, shift)
    }

    pub fn forward(&mut self, x: &Tensor4<T>, ctx: &mut Ctx) -> Tensor4<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels);
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut out = Tensor4::zeros(x.shape());

        if ctx.training {
            let mut xhat = vec![T::ZERO; x.len()];
            let mut inv_stds = vec![T::ZERO; c];
            for ch in 0..c {
                let mut sum = 0.0f64;
                let mut sum_sq = 0.0f64;
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    for &v in &x.as_slice()[base..base + plane] {
                        let v = v.to_f64();
                        sum += v;
                        sum_sq += v * v;
                    }
                }
                let mean = sum / count;
                let var = (sum_sq / count - mean * mean).max(0.0);
                let inv_std = 1.0 / (var + self.eps).sqrt();
                inv_stds[ch] = T::from_f64(inv_std);

                // Running stats use the unbiased variance estimate.
                let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
                let m = self.momentum;
                self.running_mean[ch] =
                    T::from_f64(self.running_mean[ch].to_f64() * (1.0 - m) + mean * m);
                self.running_var[ch] =
                    T::from_f64(self.running_var[ch].to_f64() * (1.0 - m) + unbiased * m);

                let g = self.gamma.data[ch];
                let b = self.beta.data[ch];
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    for i in base..base + plane {
                        let xh = T::from_f64((x.as_slice()[i].to_f64() - mean) * inv_std);
                        xhat[i] = xh;
                        out.as_mut_slice()[i] = g * xh + b;
                    }
                }
            }
            self.cache_xhat = xhat;
            self.cache_inv_std = inv_stds;
            self.cache_shape = x.shape();
            self.cache_eval_mode = false;
        } else {
            let (scale, shift) = self.inference_affine();
            for ch in 0..c {
                let (sc, sh) = (scale[ch], shift[ch]);
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    for i in base..base + plane {
                        out.as_mut_slice()[i] = sc * x.as_slice()[i] + sh;
                    }
                }
            }
            self.cache_shape = x.shape();
            self.cache_eval_mode = true;
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        let [n, c, h, w] = self.cache_shape;
        let plane = h * w;
        let mut dx = Tensor4::zeros([n, c, h, w]);

        if self.cache_eval_mode {
            let (scale, _) = self.inference_affine();
            for ch in 0..c {
                let sc = scale[ch];
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    for i in base..base + plane {
                        dx.as_mut_slice()[i] = dy.as_slice()[i] * sc;
                    }
                }
            }
            return dx;
        }

        assert_eq!(self.cache_xhat.len(), dy.len(), "backward without forward");
        let count = (n * plane) as f64;
        for ch in 0..c {
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for s in 0..n {
                let base = (s * c + ch) * plane;
                for i in base..base + plane {
                    let d = dy.as_slice()[i].to_f64();
                    sum_dy += d;
                    sum_dy_xhat += d * self.cache_xhat[i].to_f64();
                }
            }
            self.beta.grad[ch] += T::from_f64(sum_dy);
            self.gamma.grad[ch] += T::from_f64(sum_dy_xhat);

            let g = self.gamma.data[ch].to_f64();
            let inv_std = self.cache_inv_std[ch].to_f64();
            let k = g * inv_std / count;
            for s in 0..n {
                let base = (s * c + ch) * plane;
                for i in base..base + plane {
                    let d = dy.as_slice()[i].to_f64();
                    let xh = self.cache_xhat[i].to_f64();
                    dx.as_mut_slice()[i] =
                        T::from_f64(k * (count * d - sum_dy - xh * sum_dy_xhat));
                }
            }
        }
        self.cache_xhat = Vec::new();
        dx
    }
}

// ---------------------------------------------------------------------------
// Activations and pooling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    cache_mask: Vec<bool>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Relu {
            cache_mask: Vec::new(),
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>, ctx: &mut Ctx) -> Tensor4<T> {
        if ctx.training {
            self.cache_mask = x.as_slice().iter().map(|&v| v > T::ZERO).collect();
        }
        x.map(|v| v.max(T::ZERO))
    }

    pub fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        assert_eq!(self.cache_mask.len(), dy.len(), "backward without forward");
        let mut dx = dy.clone();
        for (g, &keep) in dx.as_mut_slice().iter_mut().zip(self.cache_mask.iter()) {
            if !keep {
                *g = T::ZERO;
            }
        }
        dx
    }
}

/// Average pooling; padded positions are excluded from the mean
/// (count_include_pad = false).
#[derive(Debug, Clone)]
pub struct AvgPool<T> {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cache_shape: [usize; 4],
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> AvgPool<T> {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        AvgPool {
            kernel,
            stride,
            pad,
            cache_shape: [0; 4],
            _marker: std::marker::PhantomData,
        }
    }

    fn window(&self, oy: usize, ox: usize, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let y0 = (oy * self.stride) as isize - self.pad as isize;
        let x0 = (ox * self.stride) as isize - self.pad as isize;
        let y_lo = y0.max(0) as usize;
        let x_lo = x0.max(0) as usize;
        let y_hi = ((y0 + self.kernel as isize).min(h as isize)) as usize;
        let x_hi = ((x0 + self.kernel as isize).min(w as isize)) as usize;
        (y_lo, y_hi, x_lo, x_hi)
    }

    pub fn out_shape(&self, in_shape: [usize; 4]) -> [usize; 4] {
        [
            in_shape[0],
            in_shape[1],
            conv_out_size(in_shape[2], self.kernel, self.stride, self.pad),
            conv_out_size(in_shape[3], self.kernel, self.stride, self.pad),
        ]
    }

    pub fn forward(&mut self, x: &Tensor4<T>, ctx: &mut Ctx) -> Tensor4<T> {
        let [n, c, h, w] = x.shape();
        let out_shape = self.out_shape(x.shape());
        let mut out = Tensor4::zeros(out_shape);
        for s in 0..n {
            for ch in 0..c {
                for oy in 0..out_shape[2] {
                    for ox in 0..out_shape[3] {
                        let (y_lo, y_hi, x_lo, x_hi) = self.window(oy, ox, h, w);
                        let mut acc = T::ZERO;
                        for iy in y_lo..y_hi {
                            for ix in x_lo..x_hi {
                                acc += x.at(s, ch, iy, ix);
                            }
                        }
                        let cnt = ((y_hi - y_lo) * (x_hi - x_lo)) as f64;
                        *out.at_mut(s, ch, oy, ox) = T::from_f64(acc.to_f64() / cnt);
                    }
                }
            }
        }
        if ctx.training {
            self.cache_shape = x.shape();
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        let [n, c, h, w] = self.cache_shape;
        let [_, _, oh, ow] = dy.shape();
        let mut dx = Tensor4::zeros([n, c, h, w]);
        for s in 0..n {
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (y_lo, y_hi, x_lo, x_hi) = self.window(oy, ox, h, w);
                        let cnt = ((y_hi - y_lo) * (x_hi - x_lo)) as f64;
                        let g = T::from_f64(dy.at(s, ch, oy, ox).to_f64() / cnt);
                        for iy in y_lo..y_hi {
                            for ix in x_lo..x_hi {
                                *dx.at_mut(s, ch, iy, ix) += g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Mean over the spatial dimensions, output shape (n, c, 1, 1).
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool<T> {
    cache_shape: [usize; 4],
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> GlobalAvgPool<T> {
    pub fn new() -> Self {
        GlobalAvgPool {
            cache_shape: [0; 4],
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>, ctx: &mut Ctx) -> Tensor4<T> {
        let [n, c, h, w] = x.shape();
        let plane = (h * w) as f64;
        let mut out = Tensor4::zeros([n, c, 1, 1]);
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * h * w;
                let sum: f64 = x.as_slice()[base..base + h * w]
                    .iter()
                    .map(|v| v.to_f64())
                    .sum();
                *out.at_mut(s, ch, 0, 0) = T::from_f64(sum / plane);
            }
        }
        if ctx.training {
            self.cache_shape = x.shape();
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        let [n, c, h, w] = self.cache_shape;
        let plane = (h * w) as f64;
        let mut dx = Tensor4::zeros([n, c, h, w]);
        for s in 0..n {
            for ch in 0..c {
                let g = T::from_f64(dy.at(s, ch, 0, 0).to_f64() / plane);
                let base = (s * c + ch) * h * w;
                for v in &mut dx.as_mut_slice()[base..base + h * w] {
                    *v = g;
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

/// Affine classifier over (n, features, 1, 1) tensors.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_features: usize,
    pub out_features: usize,
    pub weight_bits: Option<u32>,
    pub frozen_scale: Option<T>,
    cache_input: Vec<T>,
    cache_batch: usize,
    cache_w_eff: Option<Vec<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (1.0 / in_features as f64).sqrt();
        let data = (0..out_features * in_features)
            .map(|_| T::from_f64(T::gauss(rng).to_f64() * std))
            .collect();
        Linear {
            weight: Param::new(vec![out_features, in_features], data),
            bias: Param::zeros(vec![out_features]),
            in_features,
            out_features,
            weight_bits: None,
            frozen_scale: None,
            cache_input: Vec::new(),
            cache_batch: 0,
            cache_w_eff: None,
        }
    }

    fn effective_weights(&self, ctx: &mut Ctx) -> Option<Vec<T>> {
        let mut w: Option<Vec<T>> = None;
        if let Some(bits) = self.weight_bits {
            let scale = self
                .frozen_scale
                .unwrap_or_else(|| weight_quant_scale(&self.weight.data, bits));
            w = Some(fake_quant_weights(&self.weight.data, bits, scale));
        }
        if let Some(hwt) = ctx.hwt.as_mut() {
            if hwt.weight_eta > 0.0 {
                let base = w.as_deref().unwrap_or(&self.weight.data);
                let std = self.weight.max_abs().to_f64() * hwt.weight_eta;
                w = Some(
                    base.iter()
                        .map(|&v| T::from_f64(v.to_f64() + T::gauss(&mut hwt.rng).to_f64() * std))
                        .collect(),
                );
            }
        }
        w
    }

    pub fn forward(&mut self, x: &Tensor4<T>, ctx: &mut Ctx) -> Tensor4<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c * h * w, self.in_features);
        let w_eff = self.effective_weights(ctx);
        let weights = w_eff.as_deref().unwrap_or(&self.weight.data);

        let mut out = Tensor4::zeros([n, self.out_features, 1, 1]);
        // y = x (n x f) * W^T (f x k)
        matmul_nt(
            x.as_slice(),
            weights,
            n,
            self.in_features,
            self.out_features,
            out.as_mut_slice(),
        );
        for s in 0..n {
            for k in 0..self.out_features {
                *out.at_mut(s, k, 0, 0) += self.bias.data[k];
            }
        }
        if ctx.training {
            self.cache_input = x.as_slice().to_vec();
            self.cache_batch = n;
            self.cache_w_eff = w_eff;
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        let n = self.cache_batch;
        assert!(n > 0, "backward without forward");
        let f = self.in_features;
        let k = self.out_features;
        let weights: &[T] = self.cache_w_eff.as_deref().unwrap_or(&self.weight.data);

        // dW = dY^T (k x n) * X (n x f)
        let mut dw = vec![T::ZERO; k * f];
        matmul_tn(dy.as_slice(), &self.cache_input, k, n, f, &mut dw);
        for (g, &v) in self.weight.grad.iter_mut().zip(dw.iter()) {
            *g += v;
        }
        for s in 0..n {
            for j in 0..k {
                self.bias.grad[j] += dy.at(s, j, 0, 0);
            }
        }
        // dX = dY (n x k) * W (k x f)
        let mut dx = Tensor4::zeros([n, f, 1, 1]);
        matmul(dy.as_slice(), weights, n, k, f, dx.as_mut_slice());
        self.cache_input = Vec::new();
        self.cache_batch = 0;
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn randn(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        let len = shape.iter().product();
        Tensor4::from_vec(shape, (0..len).map(|_| f64::gauss(rng)).collect())
    }

    #[test]
    fn matmul_small_fixture() {
        let a = [1.0f64, 2.0, 3.0, 4.0]; // 2x2
        let b = [5.0f64, 6.0, 7.0, 8.0]; // 2x2
        let mut out = [0.0f64; 4];
        matmul(&a, &b, 2, 2, 2, &mut out);
        assert_eq!(out, [19.0, 22.0, 43.0, 50.0]);

        let mut out_nt = [0.0f64; 4];
        matmul_nt(&a, &b, 2, 2, 2, &mut out_nt); // a * b^T
        assert_eq!(out_nt, [17.0, 23.0, 39.0, 53.0]);

        let mut out_tn = [0.0f64; 4];
        matmul_tn(&a, &b, 2, 2, 2, &mut out_tn); // a^T * b
        assert_eq!(out_tn, [26.0, 30.0, 38.0, 44.0]);
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut rng = rng_from_seed(1);
        let mut conv = Conv2d::<f64>::new(1, 1, 3, 1, 1, &mut rng);
        // Centered delta kernel.
        conv.weight.data = vec![0.0; 9];
        conv.weight.data[4] = 1.0;
        let x = randn([2, 1, 5, 5], &mut rng);
        let y = conv.forward(&x, &mut Ctx::inference());
        for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn avg_pool_excludes_padding_from_count() {
        let x = Tensor4::from_vec([1, 1, 2, 2], vec![1.0f64, 1.0, 1.0, 1.0]);
        let mut pool = AvgPool::new(3, 1, 1);
        let y = pool.forward(&x, &mut Ctx::inference());
        // Every 3x3 window sees only the four ones; means must all be 1.
        assert!(y.as_slice().iter().all(|&v| (v - 1.0f64).abs() < 1e-12));
    }

    #[test]
    fn batchnorm_normalizes_batch_statistics() {
        let mut rng = rng_from_seed(2);
        let mut bn = BatchNorm2d::<f64>::new(3);
        let x = randn([4, 3, 5, 5], &mut rng);
        let y = bn.forward(&x, &mut Ctx::train());
        let [n, c, h, w] = y.shape();
        for ch in 0..c {
            let mut vals = Vec::new();
            for s in 0..n {
                for iy in 0..h {
                    for ix in 0..w {
                        vals.push(y.at(s, ch, iy, ix));
                    }
                }
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 =
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn batchnorm_inference_ignores_batch_composition() {
        let mut rng = rng_from_seed(3);
        let mut bn = BatchNorm2d::<f64>::new(2);
        // Shape the running stats with a few training batches.
        for _ in 0..5 {
            let x = randn([4, 2, 3, 3], &mut rng);
            bn.forward(&x, &mut Ctx::train());
        }
        let a = randn([1, 2, 3, 3], &mut rng);
        let b = randn([1, 2, 3, 3], &mut rng);
        let ya = bn.forward(&a, &mut Ctx::inference());
        // Same sample inside a different batch must map identically.
        let mut joined = Vec::new();
        joined.extend_from_slice(a.as_slice());
        joined.extend_from_slice(b.as_slice());
        let both = Tensor4::from_vec([2, 2, 3, 3], joined);
        let yboth = bn.forward(&both, &mut Ctx::inference());
        for i in 0..ya.len() {
            assert!((ya.as_slice()[i] - yboth.as_slice()[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn fake_quant_error_bounded_by_half_step() {
        let mut rng = rng_from_seed(4);
        let x = randn([1, 1, 8, 8], &mut rng);
        let mut fq = FakeQuant::<f64>::new(8);
        fq.mode = FqMode::Observe;
        fq.forward(&x, false);
        fq.mode = FqMode::Apply;
        let y = fq.forward(&x, false);
        let half_step = fq.scale() / 2.0 + 1e-12;
        for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() <= half_step);
        }
    }

    #[test]
    fn fake_quant_ste_masks_out_of_range() {
        let mut fq = FakeQuant::<f64>::new(8);
        fq.mode = FqMode::Apply;
        fq.lo = -1.0;
        fq.hi = 1.0;
        fq.observed = true;
        let x = Tensor4::from_vec([1, 1, 1, 4], vec![-2.0, -0.5, 0.5, 2.0]);
        fq.forward(&x, true);
        let dy = Tensor4::from_vec([1, 1, 1, 4], vec![1.0; 4]);
        let dx = fq.backward(&dy);
        assert_eq!(dx.as_slice(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn weight_quant_exact_on_grid_and_degenerate_zero() {
        let scale = weight_quant_scale(&[0.0f64; 4], 8);
        assert_eq!(scale, 1.0);

        // Weights already on the int8 grid round-trip exactly.
        let s = 0.01f64;
        let w: Vec<f64> = vec![-127.0 * s, -3.0 * s, 0.0, 64.0 * s, 127.0 * s];
        let scale = weight_quant_scale(&w, 8);
        let wq = fake_quant_weights(&w, 8, scale);
        for (a, b) in w.iter().zip(wq.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
