//! A linear gradient tape: the forward pass records each kernel call with
//! the handles of its inputs and outputs; `backward` replays the records in
//! exact reverse order and accumulates gradients per value and per parameter.

use crate::error::{Error, Result};
use crate::kernels::{self, BnMode, BnParams, BnStats, ConvGrads, ConvWeights};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(usize);

/// Index of a trainable parameter block in the caller's parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub enum Param {
    Conv(ConvWeights),
    Bn(BnParams),
}

impl Param {
    pub fn trainable_count(&self) -> usize {
        match self {
            Param::Conv(c) => c.param_count(),
            Param::Bn(b) => 2 * b.channels(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamGrad {
    Conv(ConvGrads),
    Bn { gamma: Vec<f64>, beta: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    DwConv3,
    PwConv1,
    BatchNorm,
    Relu,
    Relu6,
    MaxPool2,
    Reorder,
    Concat,
}

#[derive(Debug)]
enum Record {
    DwConv3 { x: ValueId, y: ValueId, param: ParamId },
    PwConv1 { x: ValueId, y: ValueId, param: ParamId },
    BatchNorm { x: ValueId, y: ValueId, param: ParamId, mode: BnMode, stats: BnStats },
    Relu { x: ValueId, y: ValueId },
    Relu6 { x: ValueId, y: ValueId },
    MaxPool2 { x: ValueId, y: ValueId },
    Reorder { x: ValueId, y: ValueId },
    Concat { a: ValueId, b: ValueId, y: ValueId, split: usize },
}

impl Record {
    fn kind(&self) -> OpKind {
        match self {
            Record::DwConv3 { .. } => OpKind::DwConv3,
            Record::PwConv1 { .. } => OpKind::PwConv1,
            Record::BatchNorm { .. } => OpKind::BatchNorm,
            Record::Relu { .. } => OpKind::Relu,
            Record::Relu6 { .. } => OpKind::Relu6,
            Record::MaxPool2 { .. } => OpKind::MaxPool2,
            Record::Reorder { .. } => OpKind::Reorder,
            Record::Concat { .. } => OpKind::Concat,
        }
    }
}

#[derive(Debug, Default)]
pub struct GradTape {
    values: Vec<Tensor>,
    records: Vec<Record>,
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    /// Indexed by [`ParamId`]; `None` for parameters the output does not depend on.
    pub params: Vec<Option<ParamGrad>>,
    values: Vec<Option<Tensor>>,
    /// Record indices in the order they were replayed.
    pub visited: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to any recorded value, typically the input.
    pub fn value(&self, id: ValueId) -> Option<&Tensor> {
        self.values.get(id.0).and_then(Option::as_ref)
    }
}

fn conv(params: &[Param], id: ParamId) -> Result<&ConvWeights> {
    match params.get(id.0) {
        Some(Param::Conv(c)) => Ok(c),
        _ => Err(Error::InvalidArgument(format!("param {} is not a conv", id.0))),
    }
}

fn bn(params: &[Param], id: ParamId) -> Result<&BnParams> {
    match params.get(id.0) {
        Some(Param::Bn(b)) => Ok(b),
        _ => Err(Error::InvalidArgument(format!("param {} is not a batch norm", id.0))),
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn op_kinds(&self) -> Vec<OpKind> {
        self.records.iter().map(Record::kind).collect()
    }

    fn push(&mut self, t: Tensor) -> ValueId {
        self.values.push(t);
        ValueId(self.values.len() - 1)
    }

    pub fn input(&mut self, x: Tensor) -> ValueId {
        self.push(x)
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn dwconv3(&mut self, params: &[Param], param: ParamId, x: ValueId) -> Result<ValueId> {
        let y = kernels::dwconv3_forward(&self.values[x.0], conv(params, param)?)?;
        let y = self.push(y);
        self.records.push(Record::DwConv3 { x, y, param });
        Ok(y)
    }

    pub fn pwconv1(&mut self, params: &[Param], param: ParamId, x: ValueId) -> Result<ValueId> {
        let y = kernels::pwconv1_forward(&self.values[x.0], conv(params, param)?)?;
        let y = self.push(y);
        self.records.push(Record::PwConv1 { x, y, param });
        Ok(y)
    }

    /// Records a batch norm. Returns the output handle and the parameters with
    /// running statistics advanced (train mode) for the caller to commit.
    pub fn batch_norm(
        &mut self,
        params: &[Param],
        param: ParamId,
        x: ValueId,
        mode: BnMode,
    ) -> Result<(ValueId, BnParams)> {
        let (y, stats, next) = kernels::bn_forward_full(&self.values[x.0], bn(params, param)?, mode)?;
        let y = self.push(y);
        self.records.push(Record::BatchNorm { x, y, param, mode, stats });
        Ok((y, next))
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let y = self.push(kernels::relu_forward(&self.values[x.0]));
        self.records.push(Record::Relu { x, y });
        y
    }

    pub fn relu6(&mut self, x: ValueId) -> ValueId {
        let y = self.push(kernels::relu6_forward(&self.values[x.0]));
        self.records.push(Record::Relu6 { x, y });
        y
    }

    pub fn maxpool2(&mut self, x: ValueId) -> Result<ValueId> {
        let y = kernels::maxpool2_forward(&self.values[x.0])?;
        let y = self.push(y);
        self.records.push(Record::MaxPool2 { x, y });
        Ok(y)
    }

    pub fn reorder(&mut self, x: ValueId) -> Result<ValueId> {
        let y = kernels::reorder_forward(&self.values[x.0])?;
        let y = self.push(y);
        self.records.push(Record::Reorder { x, y });
        Ok(y)
    }

    pub fn concat(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let y = kernels::concat_channels(&self.values[a.0], &self.values[b.0])?;
        let split = self.values[a.0].channels();
        let y = self.push(y);
        self.records.push(Record::Concat { a, b, y, split });
        Ok(y)
    }

    /// Replays the tape backward from `output` seeded with `grad`.
    pub fn backward(self, params: &[Param], output: ValueId, grad: Tensor) -> Result<Gradients> {
        if self.records.is_empty() {
            return Err(Error::EmptyTape);
        }
        if self.values[output.0].shape() != grad.shape() {
            return Err(Error::shape("backward seed", self.values[output.0].shape(), grad.shape()));
        }
        let mut vgrads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        let mut pgrads: Vec<Option<ParamGrad>> = vec![None; params.len()];
        vgrads[output.0] = Some(grad);
        let mut visited = Vec::with_capacity(self.records.len());

        fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
            match slot {
                Some(acc) => acc.add_assign(&g),
                None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for (idx, rec) in self.records.iter().enumerate().rev() {
            visited.push(idx);
            let y = match rec {
                Record::DwConv3 { y, .. }
                | Record::PwConv1 { y, .. }
                | Record::BatchNorm { y, .. }
                | Record::Relu { y, .. }
                | Record::Relu6 { y, .. }
                | Record::MaxPool2 { y, .. }
                | Record::Reorder { y, .. }
                | Record::Concat { y, .. } => *y,
            };
            let Some(dy) = vgrads[y.0].take() else {
                continue;
            };
            let v = &self.values;
            match rec {
                Record::DwConv3 { x, param, .. } => {
                    let (dx, g) = kernels::dwconv3_backward(&v[x.0], conv(params, *param)?, &dy)?;
                    accumulate(&mut vgrads[x.0], dx)?;
                    pgrads[param.0] = Some(ParamGrad::Conv(g));
                }
                Record::PwConv1 { x, param, .. } => {
                    let (dx, g) = kernels::pwconv1_backward(&v[x.0], conv(params, *param)?, &dy)?;
                    accumulate(&mut vgrads[x.0], dx)?;
                    pgrads[param.0] = Some(ParamGrad::Conv(g));
                }
                Record::BatchNorm { x, param, mode, stats, .. } => {
                    let (dx, gamma, beta) =
                        kernels::bn_backward(&v[x.0], bn(params, *param)?, *mode, stats, &dy)?;
                    accumulate(&mut vgrads[x.0], dx)?;
                    pgrads[param.0] = Some(ParamGrad::Bn { gamma, beta });
                }
                Record::Relu { x, .. } => accumulate(&mut vgrads[x.0], kernels::relu_backward(&v[x.0], &dy))?,
                Record::Relu6 { x, .. } => accumulate(&mut vgrads[x.0], kernels::relu6_backward(&v[x.0], &dy))?,
                Record::MaxPool2 { x, .. } => accumulate(&mut vgrads[x.0], kernels::maxpool2_backward(&v[x.0], &dy)?)?,
                Record::Reorder { x, .. } => accumulate(&mut vgrads[x.0], kernels::reorder_inverse(&dy)?)?,
                Record::Concat { a, b, split, .. } => {
                    let (ga, gb) = kernels::split_channels(&dy, *split)?;
                    accumulate(&mut vgrads[a.0], ga)?;
                    accumulate(&mut vgrads[b.0], gb)?;
                }
            }
        }
        Ok(Gradients {
            params: pgrads,
            values: vgrads,
            visited,
        })
    }
}
