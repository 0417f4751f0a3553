//! Runnable networks: a resolved spec plus its parameters, with a recorded
//! (trainable) forward pass and a lean inference pass.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::genome::{instantiate, FeatureShape, LayerKind, NetworkGenome, NetworkSpec};
use crate::head::{self, Anchor, Detection, HEAD_CHANNELS, NUM_ANCHORS, VALUES_PER_ANCHOR};
use crate::kernels::{self, BnMode, BnParams, ConvWeights};
use crate::tape::{GradTape, Param, ParamId, ValueId};
use crate::tensor::Tensor;

/// Initial objectness bias; a low prior keeps the many negative cells from
/// dominating the first updates.
const OBJECTNESS_BIAS_INIT: f64 = -4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub genome: NetworkGenome,
    pub spec: NetworkSpec,
    pub params: Vec<Param>,
    pub anchors: [Anchor; NUM_ANCHORS],
    /// Parameter slot of each spec layer.
    slots: Vec<Option<ParamId>>,
}

pub struct ForwardPass {
    pub tape: GradTape,
    pub input: ValueId,
    pub output: ValueId,
    /// Running statistics produced by train-mode batch norms.
    pub bn_updates: Vec<(ParamId, BnParams)>,
}

fn slots_for(spec: &NetworkSpec) -> (Vec<Option<ParamId>>, usize) {
    let mut n = 0;
    let slots = spec
        .layers
        .iter()
        .map(|l| match l.kind {
            LayerKind::DwConv3 { .. } | LayerKind::PwConv1 { .. } | LayerKind::BatchNorm | LayerKind::Head => {
                n += 1;
                Some(ParamId(n - 1))
            }
            _ => None,
        })
        .collect();
    (slots, n)
}

impl Network {
    /// He-initialised network for `genome` at `input`.
    pub fn init(
        genome: &NetworkGenome,
        input: FeatureShape,
        anchors: [Anchor; NUM_ANCHORS],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let spec = instantiate(genome, input)?;
        let mut params = Vec::new();
        for l in &spec.layers {
            let normal = |std: f64| Normal::new(0.0, std).expect("positive std");
            match l.kind {
                LayerKind::DwConv3 { bias } => {
                    let d = normal((2.0f64 / 9.0).sqrt());
                    let w = (0..9 * l.input.c).map(|_| d.sample(rng)).collect();
                    params.push(Param::Conv(ConvWeights::depthwise(
                        l.input.c,
                        w,
                        bias.then(|| vec![0.0; l.input.c]),
                    )?));
                }
                LayerKind::PwConv1 { bias } => {
                    let d = normal((2.0 / l.input.c as f64).sqrt());
                    let w = (0..l.input.c * l.output.c).map(|_| d.sample(rng)).collect();
                    params.push(Param::Conv(ConvWeights::pointwise(
                        l.output.c,
                        l.input.c,
                        w,
                        bias.then(|| vec![0.0; l.output.c]),
                    )?));
                }
                LayerKind::Head => {
                    let d = normal(0.01);
                    let w = (0..l.input.c * HEAD_CHANNELS).map(|_| d.sample(rng)).collect();
                    let mut b = vec![0.0; HEAD_CHANNELS];
                    for a in 0..NUM_ANCHORS {
                        b[a * VALUES_PER_ANCHOR + 4] = OBJECTNESS_BIAS_INIT;
                    }
                    params.push(Param::Conv(ConvWeights::pointwise(HEAD_CHANNELS, l.input.c, w, Some(b))?));
                }
                LayerKind::BatchNorm => params.push(Param::Bn(BnParams::identity(l.input.c))),
                _ => {}
            }
        }
        Self::from_parts(genome.clone(), input, params, anchors)
    }

    /// Assembles a network from explicit parameters, checking every shape.
    pub fn from_parts(
        genome: NetworkGenome,
        input: FeatureShape,
        params: Vec<Param>,
        anchors: [Anchor; NUM_ANCHORS],
    ) -> Result<Self> {
        let spec = instantiate(&genome, input)?;
        let (slots, n) = slots_for(&spec);
        if params.len() != n {
            return Err(Error::shape("network parameter blocks", n, params.len()));
        }
        for (l, slot) in spec.layers.iter().zip(&slots) {
            let Some(id) = slot else { continue };
            let ok = match (&l.kind, &params[id.0]) {
                (LayerKind::DwConv3 { bias }, Param::Conv(c)) => {
                    c.kind == kernels::ConvKind::Depthwise3x3 && c.in_channels == l.input.c && c.bias.is_some() == *bias
                }
                (LayerKind::PwConv1 { bias }, Param::Conv(c)) => {
                    c.kind == kernels::ConvKind::Pointwise1x1
                        && c.in_channels == l.input.c
                        && c.out_channels == l.output.c
                        && c.bias.is_some() == *bias
                }
                (LayerKind::Head, Param::Conv(c)) => {
                    c.in_channels == l.input.c && c.out_channels == HEAD_CHANNELS && c.bias.is_some()
                }
                (LayerKind::BatchNorm, Param::Bn(b)) => b.channels() == l.input.c && b.validate().is_ok(),
                _ => false,
            };
            if !ok {
                return Err(Error::shape("parameter block", l.kind, id.0));
            }
        }
        Ok(Self { genome, spec, params, anchors, slots })
    }

    pub fn input_shape(&self) -> FeatureShape {
        self.spec.input
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Param::trainable_count).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let i = self.spec.input;
        if x.shape()[1..] != [i.c, i.h, i.w] {
            return Err(Error::shape("network input", [i.c, i.h, i.w], x.shape()));
        }
        Ok(())
    }

    /// Forward pass recorded on a tape.
    pub fn forward(&self, x: &Tensor, mode: BnMode) -> Result<ForwardPass> {
        self.check_input(x)?;
        let mut tape = GradTape::new();
        let input = tape.input(x.clone());
        let mut cur = input;
        let mut tap = None;
        let mut bn_updates = Vec::new();
        for (l, slot) in self.spec.layers.iter().zip(&self.slots) {
            cur = match l.kind {
                LayerKind::DwConv3 { .. } => tape.dwconv3(&self.params, slot.unwrap(), cur)?,
                LayerKind::PwConv1 { .. } | LayerKind::Head => tape.pwconv1(&self.params, slot.unwrap(), cur)?,
                LayerKind::BatchNorm => {
                    let (y, next) = tape.batch_norm(&self.params, slot.unwrap(), cur, mode)?;
                    if mode == BnMode::Train {
                        bn_updates.push((slot.unwrap(), next));
                    }
                    y
                }
                LayerKind::Relu => tape.relu(cur),
                LayerKind::Relu6 => tape.relu6(cur),
                LayerKind::MaxPool2 => tape.maxpool2(cur)?,
                LayerKind::BypassTap => {
                    tap = Some(cur);
                    cur
                }
                LayerKind::BypassMerge { reorders } => {
                    let mut b = tap.ok_or_else(|| Error::InvalidGenome("bypass merge before tap".into()))?;
                    for _ in 0..reorders {
                        b = tape.reorder(b)?;
                    }
                    tape.concat(cur, b)?
                }
            };
        }
        Ok(ForwardPass { tape, input, output: cur, bn_updates })
    }

    /// Inference forward without recording; batch norm uses running statistics.
    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut tap: Option<Tensor> = None;
        for (l, slot) in self.spec.layers.iter().zip(&self.slots) {
            let p = slot.map(|id| &self.params[id.0]);
            cur = match (l.kind, p) {
                (LayerKind::DwConv3 { .. }, Some(Param::Conv(w))) => kernels::dwconv3_forward(&cur, w)?,
                (LayerKind::PwConv1 { .. } | LayerKind::Head, Some(Param::Conv(w))) => {
                    kernels::pwconv1_forward(&cur, w)?
                }
                (LayerKind::BatchNorm, Some(Param::Bn(b))) => kernels::bn_forward(&cur, b, BnMode::Infer)?.0,
                (LayerKind::Relu, _) => kernels::relu_forward(&cur),
                (LayerKind::Relu6, _) => kernels::relu6_forward(&cur),
                (LayerKind::MaxPool2, _) => kernels::maxpool2_forward(&cur)?,
                (LayerKind::BypassTap, _) => {
                    tap = Some(cur.clone());
                    cur
                }
                (LayerKind::BypassMerge { reorders }, _) => {
                    let mut b = tap.take().ok_or_else(|| Error::InvalidGenome("bypass merge before tap".into()))?;
                    for _ in 0..reorders {
                        b = kernels::reorder_forward(&b)?;
                    }
                    kernels::concat_channels(&cur, &b)?
                }
                (kind, _) => return Err(Error::InvalidArgument(format!("missing parameters for {kind:?}"))),
            };
        }
        Ok(cur)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<Detection>> {
        head::decode(&self.forward_infer(x)?, &self.anchors)
    }

    /// Commits train-mode running statistics (gamma/beta are left untouched).
    pub fn apply_bn_updates(&mut self, updates: Vec<(ParamId, BnParams)>) {
        for (id, next) in updates {
            if let Param::Bn(b) = &mut self.params[id.0] {
                b.running_mean = next.running_mean;
                b.running_var = next.running_var;
            }
        }
    }
}
