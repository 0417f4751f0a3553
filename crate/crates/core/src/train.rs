//! Mini-batch training and IoU evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, mix_seed, AugmentConfig, Sample};
use crate::error::{Error, Result};
use crate::head::{detection_loss, Detection, LossConfig};
use crate::kernels::BnMode;
use crate::model::Network;
use crate::optim::{Sgd, SgdConfig};
use crate::scoring::{iou, BoundingBox};
use crate::tape::ParamGrad;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Final learning rate as a fraction of `lr` (cosine decay).
    #[serde(default = "default_lr_floor")]
    pub lr_floor: f64,
    /// Linear warm-up length in optimizer steps.
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    8
}
fn default_lr() -> f64 {
    0.02
}
fn default_lr_floor() -> f64 {
    0.02
}
fn default_warmup() -> usize {
    20
}
fn default_momentum() -> f64 {
    0.9
}
fn default_wd() -> f64 {
    1e-4
}
fn default_clip() -> f64 {
    10.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: default_batch(),
            lr: default_lr(),
            lr_floor: default_lr_floor(),
            warmup_steps: default_warmup(),
            momentum: default_momentum(),
            weight_decay: default_wd(),
            grad_clip: default_clip(),
            augment: AugmentConfig::default(),
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::InvalidConfig("grad_clip must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_floor) {
            return Err(Error::InvalidConfig("lr_floor must be in [0, 1]".into()));
        }
        Sgd::new(self.sgd())?;
        Ok(())
    }

    fn sgd(&self) -> SgdConfig {
        SgdConfig { lr: self.lr, momentum: self.momentum, weight_decay: self.weight_decay }
    }

    /// Learning rate at optimizer step `step` of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let warm = if self.warmup_steps > 0 && step < self.warmup_steps {
            (step + 1) as f64 / self.warmup_steps as f64
        } else {
            1.0
        };
        let t = if total > 1 { step as f64 / (total - 1) as f64 } else { 0.0 };
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        self.lr * warm * (self.lr_floor + (1.0 - self.lr_floor) * cos)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean IoU on the validation set, `None` without one.
    pub val_iou: Option<f64>,
}

fn stack(samples: &[Sample]) -> Result<Tensor> {
    Tensor::stack(&samples.iter().map(|s| &s.image).collect::<Vec<_>>())
}

/// One optimizer step on a batch; returns the batch loss.
pub fn train_step(
    net: &mut Network,
    opt: &mut Sgd,
    batch: &[Sample],
    loss_cfg: &LossConfig,
    lr: f64,
    grad_clip: f64,
) -> Result<f64> {
    let x = stack(batch)?;
    let targets: Vec<BoundingBox> = batch.iter().map(|s| s.gt).collect();
    let fp = net.forward(&x, BnMode::Train)?;
    let (loss, grad) = detection_loss(fp.tape.value(fp.output), &targets, &net.anchors, loss_cfg)?;
    if !loss.is_finite() {
        return Err(Error::Evaluation(format!("training loss diverged ({loss})")));
    }
    let mut grads = fp.tape.backward(&net.params, fp.output, grad)?;
    if grad_clip > 0.0 {
        clip_grad_norm(&mut grads.params, grad_clip);
    }
    opt.step(&mut net.params, &grads.params, lr)?;
    net.apply_bn_updates(fp.bn_updates);
    Ok(loss)
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Option<ParamGrad>], max_norm: f64) -> f64 {
    fn slices(g: &mut ParamGrad) -> Vec<&mut Vec<f64>> {
        match g {
            ParamGrad::Conv(c) => std::iter::once(&mut c.weights).chain(c.bias.as_mut()).collect(),
            ParamGrad::Bn { gamma, beta } => vec![gamma, beta],
        }
    }
    let norm = grads
        .iter_mut()
        .flatten()
        .flat_map(slices)
        .map(|v| v.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for v in grads.iter_mut().flatten().flat_map(slices) {
            v.iter_mut().for_each(|x| *x *= scale);
        }
    }
    norm
}

/// Trains `net` in place. `on_epoch` runs after every epoch.
pub fn train(
    net: &mut Network,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if cfg.epochs > 0 && train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut opt = Sgd::new(cfg.sgd())?;
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            // a trailing single-sample batch has no batch statistics to speak of
            if chunk.len() < 2 && cfg.batch_size > 1 {
                continue;
            }
            let batch: Vec<Sample> = chunk.iter().map(|&i| augment(&train_set[i], &cfg.augment, &mut rng)).collect();
            let lr = cfg.lr_at(step, total);
            loss_sum += train_step(net, &mut opt, &batch, &cfg.loss, lr, cfg.grad_clip)? * batch.len() as f64;
            seen += batch.len();
            step += 1;
        }
        let val_iou = if val_set.is_empty() { None } else { Some(mean(&evaluate(net, val_set)?)) };
        let m = EpochMetrics { epoch: epoch + 1, train_loss: loss_sum / seen.max(1) as f64, val_iou };
        on_epoch(&m);
        history.push(m);
    }
    Ok(history)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

const EVAL_CHUNK: usize = 16;

/// Per-sample IoU of `predict`'s detections against ground truth.
pub fn evaluate_with(
    data: &[Sample],
    mut predict: impl FnMut(&Tensor) -> Result<Vec<Detection>>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(EVAL_CHUNK) {
        let dets = predict(&stack(chunk)?)?;
        for (d, s) in dets.iter().zip(chunk) {
            out.push(iou(&d.to_box(), &s.gt)?);
        }
    }
    Ok(out)
}

pub fn evaluate(net: &Network, data: &[Sample]) -> Result<Vec<f64>> {
    evaluate_with(data, |x| net.predict(x))
}
