//! Macro-network assembly from a cell encoding.
//!
//! The fixed skeleton is: stem conv+BN, three stages of identical cells,
//! a stride-2 residual reduction block (channel doubling) between stages,
//! and a BN+ReLU+global-pool+affine head. Cell node `i` is the elementwise
//! sum of its incoming edge outputs; conv edges run ReLU -> conv -> BN,
//! pool edges are a bare 3x3 average pool, skip is identity, and zeroize
//! emits zeros.

use std::io::Read;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::layers::{
    AvgPool, BatchNorm2d, Conv2d, Ctx, FakeQuant, FqMode, GlobalAvgPool, Linear, Param, Relu,
};
use super::{NnetError, Scalar, Tensor4};
use crate::rng::stream_rng;
use crate::space::{CellEncoding, MacroConfig, OpKind, EDGE_ENDPOINTS};

/// ReLU -> conv -> BN with activation quantizers at the conv input and the
/// BN output (the spots where the analog pipeline's DAC and ADC sit).
#[derive(Debug, Clone)]
pub struct ReluConvBn<T> {
    pub relu: Relu<T>,
    pub in_fq: FakeQuant<T>,
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub out_fq: FakeQuant<T>,
}

impl<T: Scalar> ReluConvBn<T> {
    fn new(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        ReluConvBn {
            relu: Relu::new(),
            in_fq: FakeQuant::new(8),
            conv: Conv2d::new(in_c, out_c, kernel, stride, pad, rng),
            bn: BatchNorm2d::new(out_c),
            out_fq: FakeQuant::new(8),
        }
    }

    fn forward(&mut self, x: &Tensor4<T>, ctx: &mut Ctx) -> Tensor4<T> {
        let x = self.relu.forward(x, ctx);
        let x = self.in_fq.forward(&x, ctx.training);
        let x = self.conv.forward(&x, ctx);
        let mut x = self.bn.forward(&x, ctx);
        apply_hwt_output_noise(&mut x, ctx);
        self.out_fq.forward(&x, ctx.training)
    }

    fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        let dy = self.out_fq.backward(dy);
        let dy = self.bn.backward(&dy);
        let dy = self.conv.backward(&dy);
        let dy = self.in_fq.backward(&dy);
        self.relu.backward(&dy)
    }
}

/// Additive output noise during hardware-aware training, std scaled by the
/// batch's own max magnitude. Constant w.r.t. the backward pass.
fn apply_hwt_output_noise<T: Scalar>(x: &mut Tensor4<T>, ctx: &mut Ctx) {
    if let Some(hwt) = ctx.hwt.as_mut() {
        if hwt.out_sigma > 0.0 {
            let std = x.max_abs().to_f64() * hwt.out_sigma;
            if std > 0.0 {
                for v in x.as_mut_slice() {
                    *v = T::from_f64(v.to_f64() + T::gauss(&mut hwt.rng).to_f64() * std);
                }
            }
        }
    }
}

/// One labeled cell edge.
#[derive(Debug, Clone)]
pub enum EdgeOp<T> {
    Skip,
    Zeroize { shape: [usize; 4] },
    Conv(ReluConvBn<T>),
    Pool(AvgPool<T>),
}

impl<T: Scalar> EdgeOp<T> {
    fn new(op: OpKind, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        match op {
            OpKind::Skip => EdgeOp::Skip,
            OpKind::Zeroize => EdgeOp::Zeroize { shape: [0; 4] },
            OpKind::Conv3x3 => EdgeOp::Conv(ReluConvBn::new(channels, channels, 3, 1, 1, rng)),
            OpKind::Conv1x1 => EdgeOp::Conv(ReluConvBn::new(channels, channels, 1, 1, 0, rng)),
            OpKind::AvgPool => EdgeOp::Pool(AvgPool::new(3, 1, 1)),
        }
    }

    fn forward(&mut self, x: &Tensor4<T>, ctx: &mut Ctx) -> Tensor4<T> {
        match self {
            EdgeOp::Skip => x.clone(),
            EdgeOp::Zeroize { shape } => {
                *shape = x.shape();
                Tensor4::zeros(x.shape())
            }
            EdgeOp::Conv(op) => op.forward(x, ctx),
            EdgeOp::Pool(op) => op.forward(x, ctx),
        }
    }

    fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        match self {
            EdgeOp::Skip => dy.clone(),
            EdgeOp::Zeroize { shape } => Tensor4::zeros(*shape),
            EdgeOp::Conv(op) => op.backward(dy),
            EdgeOp::Pool(op) => op.backward(dy),
        }
    }
}

/// The searched cell: 4 nodes, 6 edges in canonical order.
#[derive(Debug, Clone)]
pub struct Cell<T> {
    pub edges: Vec<EdgeOp<T>>,
}

impl<T: Scalar> Cell<T> {
    fn new(enc: &CellEncoding, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let edges = enc
            .ops
            .iter()
            .map(|&op| EdgeOp::new(op, channels, rng))
            .collect();
        Cell { edges }
    }

    fn forward(&mut self, x: &Tensor4<T>, ctx: &mut Ctx) -> Tensor4<T> {
        debug_assert_eq!(EDGE_ENDPOINTS[0], (0, 1));
        let node1 = self.edges[0].forward(x, ctx);
        let a02 = self.edges[1].forward(x, ctx);
        let a12 = self.edges[2].forward(&node1, ctx);
        let node2 = add(&a02, &a12);
        let a03 = self.edges[3].forward(x, ctx);
        let a13 = self.edges[4].forward(&node1, ctx);
        let a23 = self.edges[5].forward(&node2, ctx);
        add(&add(&a03, &a13), &a23)
    }

    fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        let d03 = self.edges[3].backward(dy);
        let d13 = self.edges[4].backward(dy);
        let d23 = self.edges[5].backward(dy);
        let dnode2 = d23;
        let d02 = self.edges[1].backward(&dnode2);
        let d12 = self.edges[2].backward(&dnode2);
        let dnode1 = add(&d13, &d12);
        let d01 = self.edges[0].backward(&dnode1);
        add(&add(&d03, &d02), &d01)
    }
}

fn add<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Tensor4<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let mut out = a.clone();
    for (o, &v) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o += v;
    }
    out
}

/// Stride-2 residual block doubling the channel count between stages.
#[derive(Debug, Clone)]
pub struct ResBlock<T> {
    pub conv_a: ReluConvBn<T>,
    pub conv_b: ReluConvBn<T>,
    pub down_pool: AvgPool<T>,
    pub down_in_fq: FakeQuant<T>,
    pub down_conv: Conv2d<T>,
    pub down_out_fq: FakeQuant<T>,
}

impl<T: Scalar> ResBlock<T> {
    fn new(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        ResBlock {
            conv_a: ReluConvBn::new(in_c, out_c, 3, 2, 1, rng),
            conv_b: ReluConvBn::new(out_c, out_c, 3, 1, 1, rng),
            down_pool: AvgPool::new(2, 2, 0),
            down_in_fq: FakeQuant::new(8),
            down_conv: Conv2d::new(in_c, out_c, 1, 1, 0, rng),
            down_out_fq: FakeQuant::new(8),
        }
    }

    fn forward(&mut self, x: &Tensor4<T>, ctx: &mut Ctx) -> Tensor4<T> {
        let main = self.conv_a.forward(x, ctx);
        let main = self.conv_b.forward(&main, ctx);
        let res = self.down_pool.forward(x, ctx);
        let res = self.down_in_fq.forward(&res, ctx.training);
        let mut res = self.down_conv.forward(&res, ctx);
        apply_hwt_output_noise(&mut res, ctx);
        let res = self.down_out_fq.forward(&res, ctx.training);
        add(&main, &res)
    }

    fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        let dres = self.down_out_fq.backward(dy);
        let dres = self.down_conv.backward(&dres);
        let dres = self.down_in_fq.backward(&dres);
        let dres = self.down_pool.backward(&dres);
        let dmain = self.conv_b.backward(dy);
        let dmain = self.conv_a.backward(&dmain);
        add(&dmain, &dres)
    }
}

/// Input stem: 3x3 conv + BN.
#[derive(Debug, Clone)]
pub struct Stem<T> {
    pub in_fq: FakeQuant<T>,
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub out_fq: FakeQuant<T>,
}

impl<T: Scalar> Stem<T> {
    fn forward(&mut self, x: &Tensor4<T>, ctx: &mut Ctx) -> Tensor4<T> {
        let x = self.in_fq.forward(x, ctx.training);
        let x = self.conv.forward(&x, ctx);
        let mut x = self.bn.forward(&x, ctx);
        apply_hwt_output_noise(&mut x, ctx);
        self.out_fq.forward(&x, ctx.training)
    }

    fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        let dy = self.out_fq.backward(dy);
        let dy = self.bn.backward(&dy);
        let dy = self.conv.backward(&dy);
        self.in_fq.backward(&dy)
    }
}

/// Classifier head: BN -> ReLU -> global average pool -> affine.
#[derive(Debug, Clone)]
pub struct Head<T> {
    pub bn: BatchNorm2d<T>,
    pub relu: Relu<T>,
    pub gap: GlobalAvgPool<T>,
    pub in_fq: FakeQuant<T>,
    pub linear: Linear<T>,
    pub out_fq: FakeQuant<T>,
}

impl<T: Scalar> Head<T> {
    fn forward(&mut self, x: &Tensor4<T>, ctx: &mut Ctx) -> Tensor4<T> {
        let x = self.bn.forward(x, ctx);
        let x = self.relu.forward(&x, ctx);
        let x = self.gap.forward(&x, ctx);
        let x = self.in_fq.forward(&x, ctx.training);
        let mut x = self.linear.forward(&x, ctx);
        apply_hwt_output_noise(&mut x, ctx);
        self.out_fq.forward(&x, ctx.training)
    }

    fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        let dy = self.out_fq.backward(dy);
        let dy = self.linear.backward(&dy);
        let dy = self.in_fq.backward(&dy);
        let dy = self.gap.backward(&dy);
        let dy = self.relu.backward(&dy);
        self.bn.backward(&dy)
    }
}

/// A buildable, trainable instance of one architecture.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub encoding: CellEncoding,
    pub macro_cfg: MacroConfig,
    pub(crate) stem: Stem<T>,
    pub(crate) stages: Vec<Vec<Cell<T>>>,
    pub(crate) reductions: Vec<ResBlock<T>>,
    pub(crate) head: Head<T>,
    /// Set once activation quantizers are calibrated and applied.
    pub quantized: bool,
}

/// Builds the macro-network for an encoding. Deterministic per seed.
pub fn build_network<T: Scalar>(
    enc: &CellEncoding,
    macro_cfg: &MacroConfig,
    seed: u64,
) -> Network<T> {
    macro_cfg
        .validate()
        .unwrap_or_else(|e| panic!("invalid macro config: {e}"));
    let mut rng = stream_rng(seed, "net-init", 0);
    let widths = [
        macro_cfg.stem_channels,
        macro_cfg.stem_channels * 2,
        macro_cfg.stem_channels * 4,
    ];

    let stem = Stem {
        in_fq: FakeQuant::new(8),
        conv: Conv2d::new(macro_cfg.input_channels, widths[0], 3, 1, 1, &mut rng),
        bn: BatchNorm2d::new(widths[0]),
        out_fq: FakeQuant::new(8),
    };
    let mut stages = Vec::with_capacity(3);
    let mut reductions = Vec::with_capacity(2);
    for (stage, &width) in widths.iter().enumerate() {
        let cells = (0..macro_cfg.cells_per_stage)
            .map(|_| Cell::new(enc, width, &mut rng))
            .collect();
        stages.push(cells);
        if stage < 2 {
            reductions.push(ResBlock::new(width, widths[stage + 1], &mut rng));
        }
    }
    let head = Head {
        bn: BatchNorm2d::new(widths[2]),
        relu: Relu::new(),
        gap: GlobalAvgPool::new(),
        in_fq: FakeQuant::new(8),
        linear: Linear::new(widths[2], macro_cfg.num_classes, &mut rng),
        out_fq: FakeQuant::new(8),
    };
    Network {
        encoding: *enc,
        macro_cfg: macro_cfg.clone(),
        stem,
        stages,
        reductions,
        head,
        quantized: false,
    }
}

impl<T: Scalar> Network<T> {
    /// Logits of shape (batch, num_classes, 1, 1).
    pub fn forward(&mut self, x: &Tensor4<T>, ctx: &mut Ctx) -> Tensor4<T> {
        let mut out = self.stem.forward(x, ctx);
        for stage in 0..3 {
            for cell in &mut self.stages[stage] {
                out = cell.forward(&out, ctx);
            }
            if stage < 2 {
                out = self.reductions[stage].forward(&out, ctx);
            }
        }
        self.head.forward(&out, ctx)
    }

    /// Gradient w.r.t. the input; parameter gradients accumulate in place.
    pub fn backward(&mut self, dlogits: &Tensor4<T>) -> Tensor4<T> {
        let mut grad = self.head.backward(dlogits);
        for stage in (0..3).rev() {
            if stage < 2 {
                grad = self.reductions[stage].backward(&grad);
            }
            for cell in self.stages[stage].iter_mut().rev() {
                grad = cell.backward(&grad);
            }
        }
        self.stem.backward(&grad)
    }

    /// Visits every parameter in a fixed, documented order: stem, stages
    /// interleaved with reductions, head.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.stem.conv.weight);
        f(&mut self.stem.bn.gamma);
        f(&mut self.stem.bn.beta);
        for stage in 0..3 {
            for cell in &mut self.stages[stage] {
                for edge in &mut cell.edges {
                    if let EdgeOp::Conv(op) = edge {
                        f(&mut op.conv.weight);
                        f(&mut op.bn.gamma);
                        f(&mut op.bn.beta);
                    }
                }
            }
            if stage < 2 {
                let block = &mut self.reductions[stage];
                f(&mut block.conv_a.conv.weight);
                f(&mut block.conv_a.bn.gamma);
                f(&mut block.conv_a.bn.beta);
                f(&mut block.conv_b.conv.weight);
                f(&mut block.conv_b.bn.gamma);
                f(&mut block.conv_b.bn.beta);
                f(&mut block.down_conv.weight);
            }
        }
        f(&mut self.head.bn.gamma);
        f(&mut self.head.bn.beta);
        f(&mut self.head.linear.weight);
        f(&mut self.head.linear.bias);
    }

    /// Visits batch-norm running statistics (state that is not a parameter
    /// but must survive serialization), in the same structural order.
    pub fn visit_running_stats(&mut self, f: &mut dyn FnMut(&mut Vec<T>)) {
        f(&mut self.stem.bn.running_mean);
        f(&mut self.stem.bn.running_var);
        for stage in 0..3 {
            for cell in &mut self.stages[stage] {
                for edge in &mut cell.edges {
                    if let EdgeOp::Conv(op) = edge {
                        f(&mut op.bn.running_mean);
                        f(&mut op.bn.running_var);
                    }
                }
            }
            if stage < 2 {
                let block = &mut self.reductions[stage];
                f(&mut block.conv_a.bn.running_mean);
                f(&mut block.conv_a.bn.running_var);
                f(&mut block.conv_b.bn.running_mean);
                f(&mut block.conv_b.bn.running_var);
            }
        }
        f(&mut self.head.bn.running_mean);
        f(&mut self.head.bn.running_var);
    }

    /// Visits every activation fake-quantizer.
    pub fn visit_fq(&mut self, f: &mut dyn FnMut(&mut FakeQuant<T>)) {
        f(&mut self.stem.in_fq);
        f(&mut self.stem.out_fq);
        for stage in 0..3 {
            for cell in &mut self.stages[stage] {
                for edge in &mut cell.edges {
                    if let EdgeOp::Conv(op) = edge {
                        f(&mut op.in_fq);
                        f(&mut op.out_fq);
                    }
                }
            }
            if stage < 2 {
                let block = &mut self.reductions[stage];
                f(&mut block.conv_a.in_fq);
                f(&mut block.conv_a.out_fq);
                f(&mut block.conv_b.in_fq);
                f(&mut block.conv_b.out_fq);
                f(&mut block.down_in_fq);
                f(&mut block.down_out_fq);
            }
        }
        f(&mut self.head.in_fq);
        f(&mut self.head.out_fq);
    }

    /// Sets the mode of all activation quantizers.
    pub fn set_fq_mode(&mut self, mode: FqMode) {
        self.visit_fq(&mut |fq| fq.mode = mode);
    }

    /// Enables or disables weight fake-quantization on all conv/linear
    /// layers. `freeze` pins each layer's grid to its current weights.
    pub fn set_weight_quant(&mut self, bits: Option<u32>, freeze: bool) {
        let apply = |weight_bits: &mut Option<u32>,
                         frozen: &mut Option<T>,
                         data: &[T]| {
            *weight_bits = bits;
            *frozen = match bits {
                Some(b) if freeze => Some(super::layers::weight_quant_scale(data, b)),
                _ => None,
            };
        };
        self.visit_convs(&mut |conv| {
            let data = conv.weight.data.clone();
            apply(&mut conv.weight_bits, &mut conv.frozen_scale, &data);
        });
        let data = self.head.linear.weight.data.clone();
        apply(
            &mut self.head.linear.weight_bits,
            &mut self.head.linear.frozen_scale,
            &data,
        );
    }

    /// Visits every convolution (not the head linear).
    pub fn visit_convs(&mut self, f: &mut dyn FnMut(&mut Conv2d<T>)) {
        f(&mut self.stem.conv);
        for stage in 0..3 {
            for cell in &mut self.stages[stage] {
                for edge in &mut cell.edges {
                    if let EdgeOp::Conv(op) = edge {
                        f(&mut op.conv);
                    }
                }
            }
            if stage < 2 {
                let block = &mut self.reductions[stage];
                f(&mut block.conv_a.conv);
                f(&mut block.conv_b.conv);
                f(&mut block.down_conv);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    /// Total learnable parameter count by enumerating parameter tensors.
    pub fn param_count(&mut self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |p| count += p.len());
        count
    }
}

/// Closed-form learnable parameter count for an encoding and macro shape.
///
/// Must equal [`Network::param_count`] exactly; the two are computed
/// independently and tested against each other.
pub fn param_count_closed_form(enc: &CellEncoding, macro_cfg: &MacroConfig) -> usize {
    let widths = [
        macro_cfg.stem_channels,
        macro_cfg.stem_channels * 2,
        macro_cfg.stem_channels * 4,
    ];
    let conv_params = |c_in: usize, c_out: usize, k: usize| k * k * c_in * c_out;
    let bn_params = |c: usize| 2 * c;

    // Stem.
    let mut total = conv_params(macro_cfg.input_channels, widths[0], 3) + bn_params(widths[0]);
    // Stages of cells.
    for &width in &widths {
        let mut cell = 0;
        for op in &enc.ops {
            cell += match op {
                OpKind::Conv3x3 => conv_params(width, width, 3) + bn_params(width),
                OpKind::Conv1x1 => conv_params(width, width, 1) + bn_params(width),
                _ => 0,
            };
        }
        total += cell * macro_cfg.cells_per_stage;
    }
    // Reduction blocks.
    for stage in 0..2 {
        let (c_in, c_out) = (widths[stage], widths[stage + 1]);
        total += conv_params(c_in, c_out, 3) + bn_params(c_out); // conv_a
        total += conv_params(c_out, c_out, 3) + bn_params(c_out); // conv_b
        total += conv_params(c_in, c_out, 1); // downsample
    }
    // Head.
    total += bn_params(widths[2]);
    total += widths[2] * macro_cfg.num_classes + macro_cfg.num_classes;
    total
}

// ---------------------------------------------------------------------------
// Weight container
// ---------------------------------------------------------------------------

const WEIGHTS_MAGIC: &[u8; 4] = b"ANBW";
const WEIGHTS_VERSION: u32 = 1;

impl Network<f32> {
    /// Writes weights and batch-norm statistics to a versioned container.
    pub fn save_weights(&mut self, path: &Path) -> Result<(), NnetError> {
        let bytes = self.weights_bytes();
        std::fs::write(path, bytes)?;
        Ok(())
    }

    /// Serialized container: magic, version, header (encoding index + macro
    /// config as JSON), then raw little-endian f32 data in visitation order.
    pub fn weights_bytes(&mut self) -> Vec<u8> {
        let header = serde_json::json!({
            "arch_index": self.encoding.to_index().0,
            "macro": self.macro_cfg,
        })
        .to_string();
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        self.visit_params(&mut |p| {
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        });
        self.visit_running_stats(&mut |s| {
            for v in s.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        });
        out
    }

    /// Rebuilds a network from a container written by [`Self::save_weights`].
    pub fn load_weights(path: &Path) -> Result<Network<f32>, NnetError> {
        let mut file = std::fs::File::open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        Self::from_weights_bytes(&bytes)
    }

    pub fn from_weights_bytes(bytes: &[u8]) -> Result<Network<f32>, NnetError> {
        let fail = |reason: &str| NnetError::Format {
            offset: 0,
            reason: reason.to_string(),
        };
        if bytes.len() < 16 || &bytes[0..4] != WEIGHTS_MAGIC {
            return Err(fail("not a weights container"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != WEIGHTS_VERSION {
            return Err(fail(&format!("unsupported container version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + header_len])
            .map_err(|e| fail(&format!("bad header: {e}")))?;
        let arch_index = header["arch_index"]
            .as_u64()
            .ok_or_else(|| fail("missing arch_index"))?;
        let macro_cfg: MacroConfig = serde_json::from_value(header["macro"].clone())
            .map_err(|e| fail(&format!("bad macro config: {e}")))?;
        let enc = CellEncoding::from_index(crate::space::ArchIndex(arch_index as u32))
            .map_err(|e| fail(&e.to_string()))?;

        let mut net = build_network::<f32>(&enc, &macro_cfg, 0);
        let mut cursor = 16 + header_len;
        let mut read_err = None;
        {
            let data = &bytes;
            let mut fill = |dst: &mut [f32]| {
                let need = dst.len() * 4;
                if cursor + need > data.len() {
                    read_err = Some("container truncated".to_string());
                    return;
                }
                for (i, v) in dst.iter_mut().enumerate() {
                    let at = cursor + i * 4;
                    *v = f32::from_le_bytes(data[at..at + 4].try_into().unwrap());
                }
                cursor += need;
            };
            net.visit_params(&mut |p| fill(&mut p.data));
            net.visit_running_stats(&mut |s| fill(s));
        }
        if let Some(reason) = read_err {
            return Err(fail(&reason));
        }
        if cursor != bytes.len() {
            return Err(fail("trailing bytes in container"));
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::ArchIndex;

    fn enc(codes: [u8; NUM_EDGES]) -> CellEncoding {
        CellEncoding::from_codes(codes).unwrap()
    }

    #[test]
    fn all_zeroize_cell_outputs_zero() {
        let mc = MacroConfig {
            stem_channels: 4,
            cells_per_stage: 1,
            num_classes: 10,
            input_hw: 8,
            input_channels: 3,
        };
        let mut cell = Cell::<f32>::new(&enc([1; 6]), 4, &mut crate::rng::rng_from_seed(0));
        let x = Tensor4::from_vec([1, 4, 8, 8], (0..256).map(|v| v as f32).collect());
        let y = cell.forward(&x, &mut Ctx::inference());
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
        let _ = mc;
    }

    #[test]
    fn all_skip_cell_multiplies_input_by_four() {
        // node3 = x + node1 + node2 = x + x + 2x = 4x.
        let mut cell = Cell::<f64>::new(&enc([0; 6]), 2, &mut crate::rng::rng_from_seed(0));
        let x = Tensor4::from_vec([1, 2, 2, 2], (1..=8).map(|v| v as f64).collect());
        let y = cell.forward(&x, &mut Ctx::inference());
        for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
            assert!((4.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn param_count_matches_closed_form() {
        let desk = MacroConfig::desk();
        for index in [0u32, 7, 1_234, 9_999, 15_624] {
            let e = CellEncoding::from_index(ArchIndex(index)).unwrap();
            let mut net = build_network::<f32>(&e, &desk, 3);
            assert_eq!(net.param_count(), param_count_closed_form(&e, &desk), "{e}");
        }
    }

    #[test]
    fn full_macro_all_conv_param_count_magnitude() {
        // The published table lists best-architecture sizes in the hundreds
        // of kilo-parameters; an all-3x3 cell is the heavy end of the space.
        let full = MacroConfig::full();
        let count = param_count_closed_form(&enc([2; 6]), &full);
        assert!(count > 100_000, "{count}");
        assert!(count < 2_000_000, "{count}");
        // Mixed cells land below the all-conv ceiling.
        let mixed = param_count_closed_form(&enc([2, 3, 0, 2, 4, 4]), &full);
        assert!(mixed < count);
    }

    #[test]
    fn forward_is_deterministic_for_a_seed() {
        let mc = MacroConfig::desk();
        let e = enc([2, 3, 0, 2, 4, 4]);
        let x = Tensor4::from_vec(
            [2, 3, 16, 16],
            (0..2 * 3 * 256).map(|v| (v % 7) as f32 * 0.1).collect(),
        );
        let mut a = build_network::<f32>(&e, &mc, 11);
        let mut b = build_network::<f32>(&e, &mc, 11);
        let ya = a.forward(&x, &mut Ctx::inference());
        let yb = b.forward(&x, &mut Ctx::inference());
        assert_eq!(ya.as_slice(), yb.as_slice());
        let mut c = build_network::<f32>(&e, &mc, 12);
        let yc = c.forward(&x, &mut Ctx::inference());
        assert_ne!(ya.as_slice(), yc.as_slice());
    }

    #[test]
    fn weight_container_round_trip() {
        let mc = MacroConfig {
            stem_channels: 4,
            cells_per_stage: 1,
            num_classes: 4,
            input_hw: 8,
            input_channels: 3,
        };
        let e = enc([2, 0, 4, 1, 3, 0]);
        let mut net = build_network::<f32>(&e, &mc, 5);
        let bytes = net.weights_bytes();
        let mut back = Network::<f32>::from_weights_bytes(&bytes).unwrap();
        let x = Tensor4::from_vec([1, 3, 8, 8], (0..192).map(|v| v as f32 * 0.01).collect());
        let ya = net.forward(&x, &mut Ctx::inference());
        let yb = back.forward(&x, &mut Ctx::inference());
        assert_eq!(ya.as_slice(), yb.as_slice());

        assert!(Network::<f32>::from_weights_bytes(&bytes[..bytes.len() - 2]).is_err());
        assert!(Network::<f32>::from_weights_bytes(b"nope").is_err());
    }
}
