//! Single-object detection head: two anchors, five values each
//! (`tx, ty, tw, th, objectness`), decoded YOLO-style.
//!
//! Channel layout: anchor `a` owns channels `5a..5a+5`. Offsets and
//! objectness go through a sigmoid; sizes scale the anchor prior by `exp`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::BoundingBox;
use crate::tensor::Tensor;

pub const NUM_ANCHORS: usize = 2;
pub const VALUES_PER_ANCHOR: usize = 5;
pub const HEAD_CHANNELS: usize = NUM_ANCHORS * VALUES_PER_ANCHOR;

/// Size logits are clamped to this magnitude before `exp`.
const SIZE_LOGIT_CLAMP: f64 = 8.0;

/// Floor on target box sides before taking logs.
const MIN_BOX_SIZE: f64 = 1e-6;

/// Anchor prior in normalized image units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchor {
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    /// Normalized centre and size.
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub objectness: f64,
    pub anchor: usize,
    pub cell: (usize, usize),
}

impl Detection {
    /// Corner form clipped to the unit square.
    pub fn to_box(&self) -> BoundingBox {
        let c = |v: f64| v.clamp(0.0, 1.0);
        BoundingBox {
            x_min: c(self.cx - self.w / 2.0),
            y_min: c(self.cy - self.h / 2.0),
            x_max: c(self.cx + self.w / 2.0),
            y_max: c(self.cy + self.h / 2.0),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_head(y: &Tensor) -> Result<()> {
    if y.channels() != HEAD_CHANNELS {
        return Err(Error::shape("detection head channels", HEAD_CHANNELS, y.channels()));
    }
    Ok(())
}

/// Decodes the box predicted by `anchor` at cell `(gy, gx)` of sample `b`.
pub fn decode_cell(y: &Tensor, b: usize, anchors: &[Anchor; NUM_ANCHORS], anchor: usize, gy: usize, gx: usize) -> Detection {
    let (gh, gw) = (y.height() as f64, y.width() as f64);
    let base = anchor * VALUES_PER_ANCHOR;
    let v = |k: usize| y.at(b, base + k, gy, gx);
    Detection {
        cx: (gx as f64 + sigmoid(v(0))) / gw,
        cy: (gy as f64 + sigmoid(v(1))) / gh,
        w: anchors[anchor].w * v(2).clamp(-SIZE_LOGIT_CLAMP, SIZE_LOGIT_CLAMP).exp(),
        h: anchors[anchor].h * v(3).clamp(-SIZE_LOGIT_CLAMP, SIZE_LOGIT_CLAMP).exp(),
        objectness: sigmoid(v(4)),
        anchor,
        cell: (gy, gx),
    }
}

/// Highest-objectness box for every sample in the batch. Ties go to the first
/// candidate in (row, column, anchor) scan order.
pub fn decode(y: &Tensor, anchors: &[Anchor; NUM_ANCHORS]) -> Result<Vec<Detection>> {
    check_head(y)?;
    let mut out = Vec::with_capacity(y.batch());
    for b in 0..y.batch() {
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for gy in 0..y.height() {
            for gx in 0..y.width() {
                for a in 0..NUM_ANCHORS {
                    let logit = y.at(b, a * VALUES_PER_ANCHOR + 4, gy, gx);
                    if best.is_none_or(|(l, ..)| logit > l) {
                        best = Some((logit, a, gy, gx));
                    }
                }
            }
        }
        let (_, a, gy, gx) = best.expect("head has at least one cell");
        out.push(decode_cell(y, b, anchors, a, gy, gx));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub coord_weight: f64,
    pub noobj_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            coord_weight: 5.0,
            noobj_weight: 0.5,
        }
    }
}

/// Index of the anchor whose shape best overlaps the target (both centred).
pub fn responsible_anchor(anchors: &[Anchor; NUM_ANCHORS], w: f64, h: f64) -> usize {
    let shape_iou = |a: &Anchor| {
        let inter = a.w.min(w) * a.h.min(h);
        inter / (a.w * a.h + w * h - inter)
    };
    let mut best = 0;
    for (i, a) in anchors.iter().enumerate().skip(1) {
        if shape_iou(a) > shape_iou(&anchors[best]) {
            best = i;
        }
    }
    best
}

/// Detection loss and its gradient with respect to the head output.
///
/// The responsible anchor gets squared error on its centre offset (grid-cell
/// units) and on its size logits against `ln(size / prior)`, plus binary cross-entropy on
/// every objectness logit (target 1 for the responsible anchor, else 0).
/// The total is averaged over the batch.
pub fn detection_loss(
    y: &Tensor,
    targets: &[BoundingBox],
    anchors: &[Anchor; NUM_ANCHORS],
    cfg: &LossConfig,
) -> Result<(f64, Tensor)> {
    check_head(y)?;
    if targets.len() != y.batch() {
        return Err(Error::shape("loss targets", y.batch(), targets.len()));
    }
    let [nb, _, nh, nw] = y.shape();
    let (gh, gw) = (nh as f64, nw as f64);
    let inv_n = 1.0 / nb as f64;
    let mut grad = Tensor::zeros(y.shape());
    let mut loss = 0.0;
    for (b, t) in targets.iter().enumerate() {
        let cx = (t.x_min + t.x_max) / 2.0 * gw;
        let cy = (t.y_min + t.y_max) / 2.0 * gh;
        let (tw, th) = (t.x_max - t.x_min, t.y_max - t.y_min);
        let gx = (cx.floor() as usize).min(nw - 1);
        let gy = (cy.floor() as usize).min(nh - 1);
        let ra = responsible_anchor(anchors, tw, th);

        for a in 0..NUM_ANCHORS {
            let oc = a * VALUES_PER_ANCHOR + 4;
            for h in 0..nh {
                for w in 0..nw {
                    let o = y.at(b, oc, h, w);
                    let (target, weight) = if a == ra && h == gy && w == gx {
                        (1.0, 1.0)
                    } else {
                        (0.0, cfg.noobj_weight)
                    };
                    loss += weight * (softplus(o) - target * o) * inv_n;
                    let i = grad.index(b, oc, h, w);
                    grad.data_mut()[i] = weight * (sigmoid(o) - target) * inv_n;
                }
            }
        }

        let base = ra * VALUES_PER_ANCHOR;
        let lam = cfg.coord_weight * inv_n;
        for (k, cell, target) in [(0, gx as f64, cx), (1, gy as f64, cy)] {
            let s = sigmoid(y.at(b, base + k, gy, gx));
            let diff = cell + s - target;
            loss += lam * diff * diff;
            let i = grad.index(b, base + k, gy, gx);
            grad.data_mut()[i] = lam * 2.0 * diff * s * (1.0 - s);
        }
        for (k, prior, size) in [(2, anchors[ra].w, tw), (3, anchors[ra].h, th)] {
            let diff = y.at(b, base + k, gy, gx) - (size.max(MIN_BOX_SIZE) / prior).ln();
            loss += lam * diff * diff;
            let i = grad.index(b, base + k, gy, gx);
            grad.data_mut()[i] = lam * 2.0 * diff;
        }
    }
    Ok((loss, grad))
}
