//! Fixed-point quantization: batch-norm folding, range calibration and an
//! integer-only inference simulator.
//!
//! Numbers are signed two's-complement with `bits` total bits and `frac`
//! fractional bits (`frac` may be negative for large ranges). Rounding is
//! half-to-even and out-of-range values saturate. Scaling is per tensor.
//!
//! Quantized inference keeps feature maps as integers between layers.
//! Convolutions multiply-accumulate in wide integers, add the bias aligned to
//! the accumulator's scale, apply a directly following activation in that
//! domain and requantize once per output element. Pooling and reordering
//! keep the input format; a bypass concat rescales both inputs to the
//! coarser of the two formats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{Activation, FeatureShape, LayerKind, NetworkGenome};
use crate::head::{self, Anchor, Detection, NUM_ANCHORS};
use crate::kernels::{self, BnMode, BnParams, ConvKind, ConvWeights, RELU6_CAP};
use crate::model::Network;
use crate::tape::Param;
use crate::tensor::Tensor;

pub const MIN_BITS: u32 = 2;
/// Keeps every product and accumulation of a layer inside `i64`.
pub const MAX_BITS: u32 = 24;
pub const MIN_FRAC: i32 = -31;
/// Also the fractional bits assigned to an all-zero tensor.
pub const MAX_FRAC: i32 = 31;

/// Feature-map and weight bit widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantScheme {
    pub fm_bits: u32,
    pub w_bits: u32,
}

impl Default for QuantScheme {
    fn default() -> Self {
        Self { fm_bits: 9, w_bits: 11 }
    }
}

impl QuantScheme {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("fm_bits", self.fm_bits), ("w_bits", self.w_bits)] {
            if !(MIN_BITS..=MAX_BITS).contains(&b) {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {b} outside [{MIN_BITS}, {MAX_BITS}]"
                )));
            }
        }
        Ok(())
    }
}

fn qmax(bits: u32) -> i64 {
    (1i64 << (bits - 1)) - 1
}

fn qmin(bits: u32) -> i64 {
    -(1i64 << (bits - 1))
}

fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

/// Smallest `e` with `2^e >= v`, for `v > 0`.
fn ceil_log2(v: f64) -> i32 {
    let mut e = v.log2().ceil() as i32;
    while pow2(e - 1) >= v {
        e -= 1;
    }
    while pow2(e) < v {
        e += 1;
    }
    e
}

/// Fractional bits that fit `max_abs` into `bits`: `bits - 1 - ceil(log2(max_abs))`,
/// clamped to `[MIN_FRAC, MAX_FRAC]`. Zero (or non-finite) ranges get `MAX_FRAC`.
pub fn frac_bits_for(max_abs: f64, bits: u32) -> i32 {
    if !(max_abs > 0.0) || !max_abs.is_finite() {
        return MAX_FRAC;
    }
    (bits as i32 - 1 - ceil_log2(max_abs)).clamp(MIN_FRAC, MAX_FRAC)
}

pub fn quantize_value(x: f64, bits: u32, frac: i32) -> i64 {
    let scaled = (x * pow2(frac)).round_ties_even();
    if scaled.is_nan() {
        return 0;
    }
    scaled.clamp(qmin(bits) as f64, qmax(bits) as f64) as i64
}

pub fn dequantize_value(q: i64, frac: i32) -> f64 {
    q as f64 * pow2(-frac)
}

/// Quantize then dequantize.
pub fn fixed_round_trip(x: f64, bits: u32, frac: i32) -> f64 {
    dequantize_value(quantize_value(x, bits, frac), frac)
}

/// `v * 2^-shift` rounded half-to-even (a left shift when `shift < 0`).
fn round_shift(v: i128, shift: i32) -> i128 {
    if shift <= 0 {
        return v << (-shift).min(100);
    }
    if shift >= 120 {
        return 0;
    }
    let q = v >> shift;
    let r = v - (q << shift);
    let half = 1i128 << (shift - 1);
    if r > half || (r == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

fn saturate(v: i128, bits: u32) -> i64 {
    v.clamp(qmin(bits) as i128, qmax(bits) as i128) as i64
}

/// Integer payload with its fixed-point interpretation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedTensor {
    pub bits: u32,
    pub frac: i32,
    pub shape: Vec<usize>,
    pub data: Vec<i64>,
}

impl FixedTensor {
    pub fn quantize(values: &[f64], shape: Vec<usize>, bits: u32, frac: i32) -> Result<Self> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::shape("fixed tensor", shape, values.len()));
        }
        Ok(Self {
            bits,
            frac,
            shape,
            data: values.iter().map(|&v| quantize_value(v, bits, frac)).collect(),
        })
    }

    /// Quantizes with fractional bits fitted to the values' own range.
    pub fn fit(values: &[f64], shape: Vec<usize>, bits: u32) -> Result<Self> {
        let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self::quantize(values, shape, bits, frac_bits_for(max_abs, bits))
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.data.iter().map(|&q| dequantize_value(q, self.frac)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (MIN_BITS..=MAX_BITS).contains(&self.bits)
            && (MIN_FRAC..=MAX_FRAC).contains(&self.frac)
            && self.shape.iter().product::<usize>() == self.data.len()
            && self.data.iter().all(|&q| q >= qmin(self.bits) && q <= qmax(self.bits));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "fixed tensor out of format (bits {}, frac {})",
                self.bits, self.frac
            )))
        }
    }
}

/// Merges a batch norm into the preceding convolution.
pub fn fold_bn(conv: &ConvWeights, bn: &BnParams) -> Result<ConvWeights> {
    bn.validate()?;
    if bn.channels() != conv.out_channels {
        return Err(Error::shape("fold_bn channels", conv.out_channels, bn.channels()));
    }
    let scale: Vec<f64> = (0..bn.channels())
        .map(|c| bn.gamma[c] / (bn.running_var[c] + bn.eps).sqrt())
        .collect();
    let per_out = conv.weights.len() / conv.out_channels;
    let weights = conv
        .weights
        .iter()
        .enumerate()
        .map(|(i, w)| w * scale[i / per_out])
        .collect();
    let bias = (0..conv.out_channels)
        .map(|c| {
            let b = conv.bias.as_ref().map_or(0.0, |b| b[c]);
            (b - bn.running_mean[c]) * scale[c] + bn.beta[c]
        })
        .collect();
    ConvWeights::new(conv.kind, conv.in_channels, conv.out_channels, weights, Some(bias))
}

/// Inference-only layer list of a network.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphLayer {
    Conv(ConvWeights),
    Bn(BnParams),
    Act(Activation),
    MaxPool2,
    Tap,
    Merge { reorders: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceGraph {
    pub genome: NetworkGenome,
    pub input: FeatureShape,
    pub anchors: [Anchor; NUM_ANCHORS],
    pub layers: Vec<GraphLayer>,
}

impl InferenceGraph {
    pub fn from_network(net: &Network) -> Result<Self> {
        let mut params = net.params.iter();
        let mut next = || params.next().ok_or_else(|| Error::InvalidArgument("missing parameter block".into()));
        let mut layers = Vec::with_capacity(net.spec.layers.len());
        for l in &net.spec.layers {
            layers.push(match l.kind {
                LayerKind::DwConv3 { .. } | LayerKind::PwConv1 { .. } | LayerKind::Head => match next()? {
                    Param::Conv(c) => GraphLayer::Conv(c.clone()),
                    Param::Bn(_) => return Err(Error::InvalidArgument("expected conv parameters".into())),
                },
                LayerKind::BatchNorm => match next()? {
                    Param::Bn(b) => GraphLayer::Bn(b.clone()),
                    Param::Conv(_) => return Err(Error::InvalidArgument("expected batch-norm parameters".into())),
                },
                LayerKind::Relu => GraphLayer::Act(Activation::Relu),
                LayerKind::Relu6 => GraphLayer::Act(Activation::Relu6),
                LayerKind::MaxPool2 => GraphLayer::MaxPool2,
                LayerKind::BypassTap => GraphLayer::Tap,
                LayerKind::BypassMerge { reorders } => GraphLayer::Merge { reorders },
            });
        }
        Ok(Self { genome: net.genome.clone(), input: net.input_shape(), anchors: net.anchors, layers })
    }

    pub fn has_bn(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, GraphLayer::Bn(_)))
    }

    /// Folds every batch norm into the convolution right before it.
    pub fn fold_bn(&self) -> Result<Self> {
        let mut layers: Vec<GraphLayer> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                GraphLayer::Bn(bn) => match layers.last_mut() {
                    Some(GraphLayer::Conv(c)) => *c = fold_bn(c, bn)?,
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "batch norm at layer {i} does not follow a convolution"
                        )))
                    }
                },
                other => layers.push(other.clone()),
            }
        }
        Ok(Self { layers, ..self.clone() })
    }

    /// Float forward; `visit` sees every layer's output.
    pub fn forward_with(&self, x: &Tensor, mut visit: impl FnMut(usize, &Tensor)) -> Result<Tensor> {
        let i = self.input;
        if x.shape()[1..] != [i.c, i.h, i.w] {
            return Err(Error::shape("graph input", [i.c, i.h, i.w], x.shape()));
        }
        let mut cur = x.clone();
        let mut tap = None;
        for (k, l) in self.layers.iter().enumerate() {
            cur = match l {
                GraphLayer::Conv(w) => match w.kind {
                    ConvKind::Depthwise3x3 => kernels::dwconv3_forward(&cur, w)?,
                    ConvKind::Pointwise1x1 => kernels::pwconv1_forward(&cur, w)?,
                },
                GraphLayer::Bn(b) => kernels::bn_forward(&cur, b, BnMode::Infer)?.0,
                GraphLayer::Act(Activation::Relu) => kernels::relu_forward(&cur),
                GraphLayer::Act(Activation::Relu6) => kernels::relu6_forward(&cur),
                GraphLayer::MaxPool2 => kernels::maxpool2_forward(&cur)?,
                GraphLayer::Tap => {
                    tap = Some(cur.clone());
                    cur
                }
                GraphLayer::Merge { reorders } => {
                    let mut b = tap.take().ok_or_else(|| Error::InvalidGenome("merge before tap".into()))?;
                    for _ in 0..*reorders {
                        b = kernels::reorder_forward(&b)?;
                    }
                    kernels::concat_channels(&cur, &b)?
                }
            };
            visit(k, &cur);
        }
        Ok(cur)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_with(x, |_, _| {})
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<Detection>> {
        head::decode(&self.forward(x)?, &self.anchors)
    }
}

/// Observed ranges and the fractional bits chosen from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub input_max_abs: f64,
    pub input_frac: i32,
    /// Max |value| of each graph layer's output over the calibration set.
    pub layer_max_abs: Vec<f64>,
    /// Fractional bits of each graph layer's output feature map.
    pub layer_frac: Vec<i32>,
}

pub fn calibrate(graph: &InferenceGraph, scheme: &QuantScheme, calib: &[Tensor]) -> Result<Calibration> {
    scheme.validate()?;
    if calib.is_empty() {
        return Err(Error::InvalidArgument("calibration needs at least one input".into()));
    }
    let mut layer_max_abs = vec![0.0f64; graph.layers.len()];
    let mut input_max_abs = 0.0f64;
    for x in calib {
        input_max_abs = input_max_abs.max(x.max_abs());
        graph.forward_with(x, |k, t| layer_max_abs[k] = layer_max_abs[k].max(t.max_abs()))?;
    }
    Ok(Calibration {
        input_max_abs,
        input_frac: frac_bits_for(input_max_abs, scheme.fm_bits),
        layer_frac: layer_max_abs.iter().map(|&m| frac_bits_for(m, scheme.fm_bits)).collect(),
        layer_max_abs,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QLayer {
    Conv {
        kind: ConvKind,
        in_channels: usize,
        out_channels: usize,
        weights: FixedTensor,
        bias: Option<FixedTensor>,
        /// Activation fused into the accumulator.
        activation: Option<Activation>,
        out_frac: i32,
    },
    Act(Activation),
    MaxPool2,
    Tap,
    Merge { reorders: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedNetwork {
    pub genome: NetworkGenome,
    pub input: FeatureShape,
    pub anchors: [Anchor; NUM_ANCHORS],
    pub scheme: QuantScheme,
    pub input_frac: i32,
    pub layers: Vec<QLayer>,
}

/// Integer feature map.
#[derive(Debug, Clone, PartialEq, Eq)]
struct QMap {
    shape: [usize; 4],
    frac: i32,
    data: Vec<i64>,
}

impl QMap {
    fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.shape, self.data.iter().map(|&q| dequantize_value(q, self.frac)).collect())
            .expect("shape matches")
    }

    // Integers below 2^53 survive the trip through f64 exactly, so the float
    // permutation kernels serve for pooling and reordering.
    fn as_float_ints(&self) -> Tensor {
        Tensor::from_vec(self.shape, self.data.iter().map(|&q| q as f64).collect()).expect("shape matches")
    }

    fn from_float_ints(t: Tensor, frac: i32) -> Self {
        Self { shape: t.shape(), frac, data: t.data().iter().map(|&v| v as i64).collect() }
    }

    fn rescale(&self, frac: i32) -> Self {
        let s = self.frac - frac;
        Self {
            shape: self.shape,
            frac,
            data: self.data.iter().map(|&q| round_shift(q as i128, s) as i64).collect(),
        }
    }
}

/// Quantizes a folded graph. Batch norms must already be folded.
pub fn quantize_network(graph: &InferenceGraph, scheme: &QuantScheme, calib: &[Tensor]) -> Result<QuantizedNetwork> {
    scheme.validate()?;
    if let Some(i) = graph.layers.iter().position(|l| matches!(l, GraphLayer::Bn(_))) {
        return Err(Error::UnfoldedBatchNorm(i));
    }
    let cal = calibrate(graph, scheme, calib)?;
    let mut layers = Vec::new();
    let mut k = 0;
    while k < graph.layers.len() {
        match &graph.layers[k] {
            GraphLayer::Conv(c) => {
                let fused = match graph.layers.get(k + 1) {
                    Some(GraphLayer::Act(a)) => Some(*a),
                    _ => None,
                };
                let out_k = if fused.is_some() { k + 1 } else { k };
                let shape = match c.kind {
                    ConvKind::Depthwise3x3 => vec![c.out_channels, 1, 3, 3],
                    ConvKind::Pointwise1x1 => vec![c.out_channels, c.in_channels, 1, 1],
                };
                layers.push(QLayer::Conv {
                    kind: c.kind,
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    weights: FixedTensor::fit(&c.weights, shape, scheme.w_bits)?,
                    bias: c
                        .bias
                        .as_ref()
                        .map(|b| FixedTensor::fit(b, vec![b.len()], scheme.w_bits))
                        .transpose()?,
                    activation: fused,
                    out_frac: cal.layer_frac[out_k],
                });
                k = out_k + 1;
            }
            GraphLayer::Bn(_) => return Err(Error::UnfoldedBatchNorm(k)),
            GraphLayer::Act(a) => {
                layers.push(QLayer::Act(*a));
                k += 1;
            }
            GraphLayer::MaxPool2 => {
                layers.push(QLayer::MaxPool2);
                k += 1;
            }
            GraphLayer::Tap => {
                layers.push(QLayer::Tap);
                k += 1;
            }
            GraphLayer::Merge { reorders } => {
                layers.push(QLayer::Merge { reorders: *reorders });
                k += 1;
            }
        }
    }
    Ok(QuantizedNetwork {
        genome: graph.genome.clone(),
        input: graph.input,
        anchors: graph.anchors,
        scheme: *scheme,
        input_frac: cal.input_frac,
        layers,
    })
}

/// ReLU6's cap expressed at `frac` fractional bits.
fn cap_at(frac: i32) -> i128 {
    round_shift(RELU6_CAP as i128, -frac)
}

#[allow(clippy::too_many_arguments)]
fn qconv(
    x: &QMap,
    kind: ConvKind,
    cin: usize,
    cout: usize,
    w: &FixedTensor,
    bias: Option<&FixedTensor>,
    act: Option<Activation>,
    out_frac: i32,
    fm_bits: u32,
) -> Result<QMap> {
    let [nb, c, nh, nw] = x.shape;
    if c != cin {
        return Err(Error::shape("quantized conv input", cin, c));
    }
    let acc_frac = x.frac + w.frac;
    let plane = nh * nw;
    let mut out = vec![0i64; nb * cout * plane];
    let finish = |acc: i64, co: usize| -> i64 {
        let mut v = acc as i128;
        if let Some(b) = bias {
            v += round_shift(b.data[co] as i128, b.frac - acc_frac);
        }
        match act {
            Some(Activation::Relu) => v = v.max(0),
            Some(Activation::Relu6) => v = v.clamp(0, cap_at(acc_frac)),
            None => {}
        }
        saturate(round_shift(v, acc_frac - out_frac), fm_bits)
    };
    for b in 0..nb {
        let xs = &x.data[b * cin * plane..(b + 1) * cin * plane];
        let os = &mut out[b * cout * plane..(b + 1) * cout * plane];
        match kind {
            ConvKind::Depthwise3x3 => {
                for ch in 0..cin {
                    let k = &w.data[ch * 9..ch * 9 + 9];
                    let src = &xs[ch * plane..(ch + 1) * plane];
                    for h in 0..nh {
                        for wi in 0..nw {
                            let mut acc = 0i64;
                            for ky in 0..3 {
                                let ih = h as isize + ky as isize - 1;
                                if ih < 0 || ih >= nh as isize {
                                    continue;
                                }
                                for kx in 0..3 {
                                    let iw = wi as isize + kx as isize - 1;
                                    if iw < 0 || iw >= nw as isize {
                                        continue;
                                    }
                                    acc += k[ky * 3 + kx] * src[ih as usize * nw + iw as usize];
                                }
                            }
                            os[ch * plane + h * nw + wi] = finish(acc, ch);
                        }
                    }
                }
            }
            ConvKind::Pointwise1x1 => {
                let mut acc = vec![0i64; plane];
                for co in 0..cout {
                    acc.iter_mut().for_each(|a| *a = 0);
                    let wrow = &w.data[co * cin..(co + 1) * cin];
                    for (ci, &wv) in wrow.iter().enumerate() {
                        if wv == 0 {
                            continue;
                        }
                        for (a, &xv) in acc.iter_mut().zip(&xs[ci * plane..(ci + 1) * plane]) {
                            *a += wv * xv;
                        }
                    }
                    for (o, &a) in os[co * plane..(co + 1) * plane].iter_mut().zip(&acc) {
                        *o = finish(a, co);
                    }
                }
            }
        }
    }
    Ok(QMap { shape: [nb, cout, nh, nw], frac: out_frac, data: out })
}

impl QuantizedNetwork {
    /// Integer forward pass; returns the dequantized head output.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let i = self.input;
        if x.shape()[1..] != [i.c, i.h, i.w] {
            return Err(Error::shape("quantized network input", [i.c, i.h, i.w], x.shape()));
        }
        let fm = self.scheme.fm_bits;
        let mut cur = QMap {
            shape: x.shape(),
            frac: self.input_frac,
            data: x.data().iter().map(|&v| quantize_value(v, fm, self.input_frac)).collect(),
        };
        let mut tap: Option<QMap> = None;
        for l in &self.layers {
            cur = match l {
                QLayer::Conv { kind, in_channels, out_channels, weights, bias, activation, out_frac } => qconv(
                    &cur,
                    *kind,
                    *in_channels,
                    *out_channels,
                    weights,
                    bias.as_ref(),
                    *activation,
                    *out_frac,
                    fm,
                )?,
                QLayer::Act(a) => {
                    let cap = cap_at(cur.frac).min(qmax(fm) as i128) as i64;
                    let data = cur
                        .data
                        .iter()
                        .map(|&q| match a {
                            Activation::Relu => q.max(0),
                            Activation::Relu6 => q.clamp(0, cap),
                        })
                        .collect();
                    QMap { data, ..cur }
                }
                QLayer::MaxPool2 => QMap::from_float_ints(kernels::maxpool2_forward(&cur.as_float_ints())?, cur.frac),
                QLayer::Tap => {
                    tap = Some(cur.clone());
                    cur
                }
                QLayer::Merge { reorders } => {
                    let mut b = tap.take().ok_or_else(|| Error::InvalidGenome("merge before tap".into()))?;
                    for _ in 0..*reorders {
                        b = QMap::from_float_ints(kernels::reorder_forward(&b.as_float_ints())?, b.frac);
                    }
                    let frac = cur.frac.min(b.frac);
                    let (a, b) = (cur.rescale(frac), b.rescale(frac));
                    QMap::from_float_ints(kernels::concat_channels(&a.as_float_ints(), &b.as_float_ints())?, frac)
                }
            };
        }
        Ok(cur.to_tensor())
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<Detection>> {
        head::decode(&self.forward(x)?, &self.anchors)
    }
}
