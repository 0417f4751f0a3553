//! Binary weight checkpoints (little-endian throughout).
//!
//! Float checkpoint:
//!
//! ```text
//! magic        8 bytes  "BNAS-FLT"
//! version      u32      1
//! arch_len     u32      length of the architecture block
//! arch         bytes    genome as UTF-8 TOML
//! input        3 x u32  channels, height, width
//! anchors      4 x f64  w0 h0 w1 h1
//! layer_count  u32
//! records      layer_count x record
//!
//! record       tag u8 (1 dwconv3, 2 pwconv1, 3 batch norm), tensor_count u8,
//!              tensors
//! tensor       rank u8, dims rank x u32, payload prod(dims) x f64
//! ```
//!
//! Conv records hold the weights (`[out, 1, 3, 3]` or `[out, in, 1, 1]`)
//! and, when present, the bias `[out]`. Batch-norm records hold gamma, beta,
//! running mean, running variance (each `[C]`) and `[eps, momentum]`.
//!
//! Quantized checkpoint: magic "BNAS-QNT", the same header through
//! `anchors`, then `fm_bits u32, w_bits u32, input_frac i32, layer_count
//! u32` and records:
//!
//! ```text
//! conv     tag 1 (dw) or 2 (pw), activation u8 (0 none, 1 relu, 2 relu6),
//!          out_frac i32, in u32, out u32, tensor_count u8, fixed tensors
//! act      tag 4, activation u8
//! pool     tag 5
//! tap      tag 6
//! merge    tag 7, reorders u32
//! fixed    bits u8, frac i32, rank u8, dims rank x u32, payload prod(dims) x i32
//! ```
//!
//! Both formats round-trip bit-exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::genome::{Activation, FeatureShape, NetworkGenome};
use crate::head::{Anchor, Detection, NUM_ANCHORS};
use crate::kernels::{BnParams, ConvKind, ConvWeights};
use crate::model::Network;
use crate::quant::{FixedTensor, QLayer, QuantScheme, QuantizedNetwork};
use crate::tape::Param;
use crate::tensor::Tensor;

pub const FLOAT_MAGIC: &[u8; 8] = b"BNAS-FLT";
pub const QUANT_MAGIC: &[u8; 8] = b"BNAS-QNT";
pub const VERSION: u32 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len_u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
        self.u32(v);
        Ok(())
    }
    fn dims(&mut self, dims: &[usize]) -> Result<()> {
        self.u8(dims.len() as u8);
        for &d in dims {
            self.len_u32(d)?;
        }
        Ok(())
    }
    fn tensor(&mut self, dims: &[usize], data: &[f64]) -> Result<()> {
        self.dims(dims)?;
        data.iter().for_each(|&v| self.f64(v));
        Ok(())
    }
    fn header(&mut self, magic: &[u8; 8], genome: &NetworkGenome, input: FeatureShape, anchors: &[Anchor; NUM_ANCHORS]) -> Result<()> {
        self.0.extend_from_slice(magic);
        self.u32(VERSION);
        let arch = genome.to_toml()?;
        self.len_u32(arch.len())?;
        self.0.extend_from_slice(arch.as_bytes());
        for v in [input.c, input.h, input.w] {
            self.len_u32(v)?;
        }
        for a in anchors {
            self.f64(a.w);
            self.f64(a.h);
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn dims(&mut self) -> Result<Vec<usize>> {
        let rank = self.u8()? as usize;
        let dims = (0..rank).map(|_| self.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        match n {
            Some(n) if n <= self.buf.len() => Ok(dims),
            _ => Err(Error::Checkpoint(format!("implausible tensor dims {dims:?}"))),
        }
    }
    fn tensor(&mut self) -> Result<(Vec<usize>, Vec<f64>)> {
        let dims = self.dims()?;
        let n = dims.iter().product();
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok((dims, data))
    }
    fn header(&mut self, magic: &[u8; 8]) -> Result<(NetworkGenome, FeatureShape, [Anchor; NUM_ANCHORS])> {
        if self.take(8)? != magic {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = self.u32()? as usize;
        let arch = std::str::from_utf8(self.take(n)?)
            .map_err(|_| Error::Checkpoint("architecture block is not UTF-8".into()))?;
        let genome = NetworkGenome::from_toml(arch)?;
        let input = FeatureShape::new(self.u32()? as usize, self.u32()? as usize, self.u32()? as usize);
        let mut anchors = [Anchor { w: 0.0, h: 0.0 }; NUM_ANCHORS];
        for a in &mut anchors {
            a.w = self.f64()?;
            a.h = self.f64()?;
        }
        Ok((genome, input, anchors))
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

const TAG_DW: u8 = 1;
const TAG_PW: u8 = 2;
const TAG_BN: u8 = 3;
const TAG_ACT: u8 = 4;
const TAG_POOL: u8 = 5;
const TAG_TAP: u8 = 6;
const TAG_MERGE: u8 = 7;

fn conv_dims(c: &ConvWeights) -> Vec<usize> {
    match c.kind {
        ConvKind::Depthwise3x3 => vec![c.out_channels, 1, 3, 3],
        ConvKind::Pointwise1x1 => vec![c.out_channels, c.in_channels, 1, 1],
    }
}

pub fn encode_float(net: &Network) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.header(FLOAT_MAGIC, &net.genome, net.input_shape(), &net.anchors)?;
    w.len_u32(net.params.len())?;
    for p in &net.params {
        match p {
            Param::Conv(c) => {
                w.u8(if c.kind == ConvKind::Depthwise3x3 { TAG_DW } else { TAG_PW });
                w.u8(1 + c.bias.is_some() as u8);
                w.tensor(&conv_dims(c), &c.weights)?;
                if let Some(b) = &c.bias {
                    w.tensor(&[b.len()], b)?;
                }
            }
            Param::Bn(b) => {
                w.u8(TAG_BN);
                w.u8(5);
                for v in [&b.gamma, &b.beta, &b.running_mean, &b.running_var] {
                    w.tensor(&[v.len()], v)?;
                }
                w.tensor(&[2], &[b.eps, b.momentum])?;
            }
        }
    }
    Ok(w.0)
}

pub fn decode_float(buf: &[u8]) -> Result<Network> {
    let mut r = Reader { buf, pos: 0 };
    let (genome, input, anchors) = r.header(FLOAT_MAGIC)?;
    let count = r.u32()? as usize;
    let mut params = Vec::new();
    for i in 0..count {
        let tag = r.u8()?;
        let n = r.u8()? as usize;
        let tensors = (0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        let bad = |why: &str| Error::Checkpoint(format!("record {i}: {why}"));
        params.push(match tag {
            TAG_DW | TAG_PW => {
                let (dims, weights) = tensors.first().cloned().ok_or_else(|| bad("missing weights"))?;
                if dims.len() != 4 || n > 2 {
                    return Err(bad("conv record layout"));
                }
                let kind = if tag == TAG_DW { ConvKind::Depthwise3x3 } else { ConvKind::Pointwise1x1 };
                let cin = if tag == TAG_DW { dims[0] } else { dims[1] };
                let bias = tensors.get(1).map(|(_, b)| b.clone());
                Param::Conv(ConvWeights::new(kind, cin, dims[0], weights, bias)?)
            }
            TAG_BN => {
                if n != 5 || tensors[4].1.len() != 2 {
                    return Err(bad("batch-norm record layout"));
                }
                let b = BnParams {
                    gamma: tensors[0].1.clone(),
                    beta: tensors[1].1.clone(),
                    running_mean: tensors[2].1.clone(),
                    running_var: tensors[3].1.clone(),
                    eps: tensors[4].1[0],
                    momentum: tensors[4].1[1],
                };
                b.validate()?;
                Param::Bn(b)
            }
            t => return Err(bad(&format!("unknown tag {t}"))),
        });
    }
    r.finish()?;
    Network::from_parts(genome, input, params, anchors)
}

fn act_code(a: Option<Activation>) -> u8 {
    match a {
        None => 0,
        Some(Activation::Relu) => 1,
        Some(Activation::Relu6) => 2,
    }
}

fn act_from(code: u8) -> Result<Option<Activation>> {
    match code {
        0 => Ok(None),
        1 => Ok(Some(Activation::Relu)),
        2 => Ok(Some(Activation::Relu6)),
        c => Err(Error::Checkpoint(format!("unknown activation code {c}"))),
    }
}

fn write_fixed(w: &mut Writer, t: &FixedTensor) -> Result<()> {
    w.u8(t.bits as u8);
    w.i32(t.frac);
    w.dims(&t.shape)?;
    for &q in &t.data {
        // |q| < 2^23 by the bit-width bound
        w.i32(q as i32);
    }
    Ok(())
}

fn read_fixed(r: &mut Reader) -> Result<FixedTensor> {
    let bits = r.u8()? as u32;
    let frac = r.i32()?;
    let shape = r.dims()?;
    let n = shape.iter().product();
    let data = (0..n).map(|_| r.i32().map(i64::from)).collect::<Result<Vec<_>>>()?;
    let t = FixedTensor { bits, frac, shape, data };
    t.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(t)
}

pub fn encode_quantized(q: &QuantizedNetwork) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.header(QUANT_MAGIC, &q.genome, q.input, &q.anchors)?;
    w.u32(q.scheme.fm_bits);
    w.u32(q.scheme.w_bits);
    w.i32(q.input_frac);
    w.len_u32(q.layers.len())?;
    for l in &q.layers {
        match l {
            QLayer::Conv { kind, in_channels, out_channels, weights, bias, activation, out_frac } => {
                w.u8(if *kind == ConvKind::Depthwise3x3 { TAG_DW } else { TAG_PW });
                w.u8(act_code(*activation));
                w.i32(*out_frac);
                w.len_u32(*in_channels)?;
                w.len_u32(*out_channels)?;
                w.u8(1 + bias.is_some() as u8);
                write_fixed(&mut w, weights)?;
                if let Some(b) = bias {
                    write_fixed(&mut w, b)?;
                }
            }
            QLayer::Act(a) => {
                w.u8(TAG_ACT);
                w.u8(act_code(Some(*a)));
            }
            QLayer::MaxPool2 => w.u8(TAG_POOL),
            QLayer::Tap => w.u8(TAG_TAP),
            QLayer::Merge { reorders } => {
                w.u8(TAG_MERGE);
                w.len_u32(*reorders)?;
            }
        }
    }
    Ok(w.0)
}

pub fn decode_quantized(buf: &[u8]) -> Result<QuantizedNetwork> {
    let mut r = Reader { buf, pos: 0 };
    let (genome, input, anchors) = r.header(QUANT_MAGIC)?;
    let scheme = QuantScheme { fm_bits: r.u32()?, w_bits: r.u32()? };
    scheme.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let input_frac = r.i32()?;
    let count = r.u32()? as usize;
    let mut layers = Vec::new();
    for i in 0..count {
        let tag = r.u8()?;
        layers.push(match tag {
            TAG_DW | TAG_PW => {
                let activation = act_from(r.u8()?)?;
                let out_frac = r.i32()?;
                let in_channels = r.u32()? as usize;
                let out_channels = r.u32()? as usize;
                let n = r.u8()?;
                if !(1..=2).contains(&n) {
                    return Err(Error::Checkpoint(format!("record {i}: conv with {n} tensors")));
                }
                let weights = read_fixed(&mut r)?;
                let bias = if n == 2 { Some(read_fixed(&mut r)?) } else { None };
                let kind = if tag == TAG_DW { ConvKind::Depthwise3x3 } else { ConvKind::Pointwise1x1 };
                let expected = if tag == TAG_DW { in_channels * 9 } else { in_channels * out_channels };
                if weights.data.len() != expected || bias.as_ref().is_some_and(|b| b.data.len() != out_channels) {
                    return Err(Error::Checkpoint(format!("record {i}: conv tensor sizes")));
                }
                QLayer::Conv { kind, in_channels, out_channels, weights, bias, activation, out_frac }
            }
            TAG_ACT => QLayer::Act(
                act_from(r.u8()?)?.ok_or_else(|| Error::Checkpoint(format!("record {i}: empty activation")))?,
            ),
            TAG_POOL => QLayer::MaxPool2,
            TAG_TAP => QLayer::Tap,
            TAG_MERGE => QLayer::Merge { reorders: r.u32()? as usize },
            t => return Err(Error::Checkpoint(format!("record {i}: unknown tag {t}"))),
        });
    }
    r.finish()?;
    Ok(QuantizedNetwork { genome, input, anchors, scheme, input_frac, layers })
}

/// A loaded checkpoint of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Float(Network),
    Quantized(QuantizedNetwork),
}

impl Model {
    pub fn genome(&self) -> &NetworkGenome {
        match self {
            Model::Float(n) => &n.genome,
            Model::Quantized(q) => &q.genome,
        }
    }

    pub fn input_shape(&self) -> FeatureShape {
        match self {
            Model::Float(n) => n.input_shape(),
            Model::Quantized(q) => q.input,
        }
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<Detection>> {
        match self {
            Model::Float(n) => n.predict(x),
            Model::Quantized(q) => q.predict(x),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        match self {
            Model::Float(n) => encode_float(n),
            Model::Quantized(q) => encode_quantized(q),
        }
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        match buf.get(..8) {
            Some(m) if m == FLOAT_MAGIC => decode_float(buf).map(Model::Float),
            Some(m) if m == QUANT_MAGIC => decode_quantized(buf).map(Model::Quantized),
            _ => Err(Error::Checkpoint("unrecognized magic".into())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{reference_genome, ReferenceVariant};
    use crate::quant::{quantize_network, InferenceGraph};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Network {
        let mut g = reference_genome(ReferenceVariant::C, Activation::Relu6);
        g.fv1 = g.fv1.iter().map(|w| w / 16).collect();
        let anchors = [Anchor { w: 0.1, h: 0.2 }, Anchor { w: 0.3, h: 0.35 }];
        Network::init(&g, FeatureShape::new(3, 16, 32), anchors, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    #[test]
    fn float_round_trip_bit_exact() {
        let n = net();
        let bytes = encode_float(&n).unwrap();
        let back = decode_float(&bytes).unwrap();
        assert_eq!(back, n);
        assert_eq!(encode_float(&back).unwrap(), bytes);
        assert_eq!(&bytes[..8], FLOAT_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), VERSION);
    }

    #[test]
    fn quantized_round_trip_bit_exact() {
        let n = net();
        let g = InferenceGraph::from_network(&n).unwrap().fold_bn().unwrap();
        let x = Tensor::filled([1, 3, 16, 32], 0.5);
        let q = quantize_network(&g, &QuantScheme::default(), &[x]).unwrap();
        let m = Model::Quantized(q);
        let bytes = m.encode().unwrap();
        let back = Model::decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn truncated_and_garbage_rejected() {
        let bytes = encode_float(&net()).unwrap();
        assert!(decode_float(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_float(&extra).is_err());
        assert!(Model::decode(b"nonsense").is_err());
    }
}
