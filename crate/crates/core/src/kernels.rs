//! Forward and backward kernels for the layer vocabulary of depthwise-separable
//! detection networks: 3x3 depthwise conv, 1x1 pointwise conv, batch norm,
//! ReLU/ReLU6, 2x2 max pooling, space-to-depth reordering and channel concat.
//!
//! Every kernel is a pure function of its inputs. Backward kernels take the
//! forward input (activations are recomputed where cheap rather than cached).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvKind {
    Depthwise3x3,
    Pointwise1x1,
}

/// Convolution parameters. Depthwise weights are laid out `[C][3][3]`,
/// pointwise weights `[Cout][Cin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub kind: ConvKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl ConvWeights {
    pub fn depthwise(channels: usize, weights: Vec<f64>, bias: Option<Vec<f64>>) -> Result<Self> {
        Self::new(ConvKind::Depthwise3x3, channels, channels, weights, bias)
    }

    pub fn pointwise(
        out_channels: usize,
        in_channels: usize,
        weights: Vec<f64>,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        Self::new(ConvKind::Pointwise1x1, in_channels, out_channels, weights, bias)
    }

    pub fn new(
        kind: ConvKind,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f64>,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        let expected = match kind {
            ConvKind::Depthwise3x3 => {
                if in_channels != out_channels {
                    return Err(Error::shape("depthwise channels", in_channels, out_channels));
                }
                in_channels * 9
            }
            ConvKind::Pointwise1x1 => in_channels * out_channels,
        };
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidArgument("conv channel count must be >= 1".into()));
        }
        if weights.len() != expected {
            return Err(Error::shape("conv weights length", expected, weights.len()));
        }
        if let Some(b) = &bias {
            if b.len() != out_channels {
                return Err(Error::shape("conv bias length", out_channels, b.len()));
            }
        }
        Ok(Self {
            kind,
            in_channels,
            out_channels,
            weights,
            bias,
        })
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

/// Gradients of a convolution's parameters, same layout as [`ConvWeights`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

pub fn dwconv3_forward(x: &Tensor, w: &ConvWeights) -> Result<Tensor> {
    if w.kind != ConvKind::Depthwise3x3 {
        return Err(Error::InvalidArgument("dwconv3 needs depthwise weights".into()));
    }
    if x.channels() != w.in_channels {
        return Err(Error::shape(
            "dwconv3 input vs weights",
            x.shape(),
            [w.out_channels, 1, 3, 3],
        ));
    }
    let [nb, nc, nh, nw] = x.shape();
    let mut out = Tensor::zeros(x.shape());
    let plane = nh * nw;
    for b in 0..nb {
        for c in 0..nc {
            let k = &w.weights[c * 9..c * 9 + 9];
            let bias = w.bias.as_ref().map_or(0.0, |v| v[c]);
            let src = x.plane_slice(b, c);
            let start = (b * nc + c) * plane;
            let dst = &mut out.data_mut()[start..start + plane];
            dw_plane_forward(src, dst, k, bias, nh, nw);
        }
    }
    Ok(out)
}

fn dw_plane_forward(src: &[f64], dst: &mut [f64], k: &[f64], bias: f64, nh: usize, nw: usize) {
    dst.iter_mut().for_each(|v| *v = bias);
    for h in 0..nh {
        let row = &mut dst[h * nw..(h + 1) * nw];
        for ky in 0..3 {
            let ih = h as isize + ky as isize - 1;
            if ih < 0 || ih >= nh as isize {
                continue;
            }
            let srow = &src[ih as usize * nw..(ih as usize + 1) * nw];
            // kx = 0 reads column w-1, kx = 2 reads column w+1.
            let (k0, k1, k2) = (k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]);
            for (o, s) in row.iter_mut().zip(srow) {
                *o += k1 * s;
            }
            if nw > 1 {
                for (o, s) in row[1..].iter_mut().zip(&srow[..nw - 1]) {
                    *o += k0 * s;
                }
                for (o, s) in row[..nw - 1].iter_mut().zip(&srow[1..]) {
                    *o += k2 * s;
                }
            }
        }
    }
}

/// Returns `(dx, grads)` for a depthwise conv given forward input `x` and upstream `dy`.
pub fn dwconv3_backward(x: &Tensor, w: &ConvWeights, dy: &Tensor) -> Result<(Tensor, ConvGrads)> {
    if dy.shape() != x.shape() || x.channels() != w.in_channels {
        return Err(Error::shape("dwconv3 backward", x.shape(), dy.shape()));
    }
    let [nb, nc, nh, nw] = x.shape();
    let plane = nh * nw;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = vec![0.0; nc * 9];
    let mut db = w.bias.as_ref().map(|_| vec![0.0; nc]);
    for b in 0..nb {
        for c in 0..nc {
            let k = &w.weights[c * 9..c * 9 + 9];
            let src = x.plane_slice(b, c);
            let g = dy.plane_slice(b, c);
            if let Some(db) = db.as_mut() {
                db[c] += g.iter().sum::<f64>();
            }
            let start = (b * nc + c) * plane;
            let dsrc = &mut dx.data_mut()[start..start + plane];
            let dk = &mut dw[c * 9..c * 9 + 9];
            for h in 0..nh {
                let grow = &g[h * nw..(h + 1) * nw];
                for ky in 0..3 {
                    let ih = h as isize + ky as isize - 1;
                    if ih < 0 || ih >= nh as isize {
                        continue;
                    }
                    let ih = ih as usize;
                    let srow = &src[ih * nw..(ih + 1) * nw];
                    let drow = &mut dsrc[ih * nw..(ih + 1) * nw];
                    // centre tap
                    dk[ky * 3 + 1] += dot(grow, srow);
                    for (d, gv) in drow.iter_mut().zip(grow) {
                        *d += k[ky * 3 + 1] * gv;
                    }
                    if nw > 1 {
                        // output w reads input w-1
                        dk[ky * 3] += dot(&grow[1..], &srow[..nw - 1]);
                        for (d, gv) in drow[..nw - 1].iter_mut().zip(&grow[1..]) {
                            *d += k[ky * 3] * gv;
                        }
                        // output w reads input w+1
                        dk[ky * 3 + 2] += dot(&grow[..nw - 1], &srow[1..]);
                        for (d, gv) in drow[1..].iter_mut().zip(&grow[..nw - 1]) {
                            *d += k[ky * 3 + 2] * gv;
                        }
                    }
                }
            }
        }
    }
    Ok((dx, ConvGrads { weights: dw, bias: db }))
}

pub fn pwconv1_forward(x: &Tensor, w: &ConvWeights) -> Result<Tensor> {
    if w.kind != ConvKind::Pointwise1x1 {
        return Err(Error::InvalidArgument("pwconv1 needs pointwise weights".into()));
    }
    if x.channels() != w.in_channels {
        return Err(Error::shape(
            "pwconv1 input vs weights",
            x.shape(),
            [w.out_channels, w.in_channels],
        ));
    }
    let [nb, cin, nh, nw] = x.shape();
    let cout = w.out_channels;
    let plane = nh * nw;
    let mut out = Tensor::zeros([nb, cout, nh, nw]);
    let chunk = spatial_chunk(cin.max(cout));
    for b in 0..nb {
        let xs = x.sample_slice(b);
        let os = &mut out.data_mut()[b * cout * plane..(b + 1) * cout * plane];
        for p0 in (0..plane).step_by(chunk) {
            let p1 = (p0 + chunk).min(plane);
            for co in 0..cout {
                let orow = &mut os[co * plane + p0..co * plane + p1];
                let bias = w.bias.as_ref().map_or(0.0, |v| v[co]);
                orow.iter_mut().for_each(|v| *v = bias);
                let wrow = &w.weights[co * cin..(co + 1) * cin];
                for (ci, &wv) in wrow.iter().enumerate() {
                    if wv == 0.0 {
                        continue;
                    }
                    let xrow = &xs[ci * plane + p0..ci * plane + p1];
                    for (o, xv) in orow.iter_mut().zip(xrow) {
                        *o += wv * xv;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Spatial block length keeping one block of every channel cache resident.
fn spatial_chunk(channels: usize) -> usize {
    (16384 / channels.max(1)).clamp(64, 4096)
}

/// Dot product with four independent accumulators.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn pwconv1_backward(x: &Tensor, w: &ConvWeights, dy: &Tensor) -> Result<(Tensor, ConvGrads)> {
    let [nb, cin, nh, nw] = x.shape();
    let cout = w.out_channels;
    if dy.shape() != [nb, cout, nh, nw] || cin != w.in_channels {
        return Err(Error::shape("pwconv1 backward", x.shape(), dy.shape()));
    }
    let plane = nh * nw;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = vec![0.0; cout * cin];
    let mut db = w.bias.as_ref().map(|_| vec![0.0; cout]);
    let chunk = spatial_chunk(cin.max(cout));
    for b in 0..nb {
        let xs = x.sample_slice(b);
        let gs = dy.sample_slice(b);
        let dxs = &mut dx.data_mut()[b * cin * plane..(b + 1) * cin * plane];
        for p0 in (0..plane).step_by(chunk) {
            let p1 = (p0 + chunk).min(plane);
            for co in 0..cout {
                let grow = &gs[co * plane + p0..co * plane + p1];
                if let Some(db) = db.as_mut() {
                    db[co] += grow.iter().sum::<f64>();
                }
                for ci in 0..cin {
                    let xrow = &xs[ci * plane + p0..ci * plane + p1];
                    dw[co * cin + ci] += dot(grow, xrow);
                    let wv = w.weights[co * cin + ci];
                    let drow = &mut dxs[ci * plane + p0..ci * plane + p1];
                    for (d, g) in drow.iter_mut().zip(grow) {
                        *d += wv * g;
                    }
                }
            }
        }
    }
    Ok((dx, ConvGrads { weights: dw, bias: db }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BnMode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    /// Weight of the current batch in the running-statistics update.
    pub momentum: f64,
}

impl BnParams {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: Self::DEFAULT_EPS,
            momentum: Self::DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::InvalidArgument("batch norm vectors differ in length".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("batch norm epsilon must be > 0".into()));
        }
        if self.running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("batch norm running variance < 0".into()));
        }
        Ok(())
    }
}

/// Per-channel statistics actually used to normalize a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
}

fn check_bn(x: &Tensor, p: &BnParams) -> Result<()> {
    p.validate()?;
    if x.channels() != p.channels() {
        return Err(Error::shape("batch norm", x.shape(), p.channels()));
    }
    Ok(())
}

pub fn batch_stats(x: &Tensor) -> BnStats {
    let [nb, nc, ..] = x.shape();
    let n = (nb * x.plane()) as f64;
    let mut mean = vec![0.0; nc];
    let mut var = vec![0.0; nc];
    for c in 0..nc {
        let mut s = 0.0;
        for b in 0..nb {
            s += x.plane_slice(b, c).iter().sum::<f64>();
        }
        let m = s / n;
        let mut v = 0.0;
        for b in 0..nb {
            v += x.plane_slice(b, c).iter().map(|x| (x - m) * (x - m)).sum::<f64>();
        }
        mean[c] = m;
        var[c] = v / n;
    }
    BnStats { mean, var }
}

fn normalize(x: &Tensor, p: &BnParams, stats: &BnStats) -> Tensor {
    let [nb, nc, ..] = x.shape();
    let plane = x.plane();
    let mut out = Tensor::zeros(x.shape());
    for b in 0..nb {
        for c in 0..nc {
            let scale = p.gamma[c] / (stats.var[c] + p.eps).sqrt();
            let shift = p.beta[c] - stats.mean[c] * scale;
            let start = (b * nc + c) * plane;
            let dst = &mut out.data_mut()[start..start + plane];
            for (o, v) in dst.iter_mut().zip(x.plane_slice(b, c)) {
                *o = v * scale + shift;
            }
        }
    }
    out
}

/// Batch-norm forward. Returns the output, the statistics used and the
/// parameter set with running statistics updated (unchanged in infer mode).
pub fn bn_forward_full(x: &Tensor, p: &BnParams, mode: BnMode) -> Result<(Tensor, BnStats, BnParams)> {
    check_bn(x, p)?;
    match mode {
        BnMode::Infer => {
            let stats = BnStats {
                mean: p.running_mean.clone(),
                var: p.running_var.clone(),
            };
            Ok((normalize(x, p, &stats), stats, p.clone()))
        }
        BnMode::Train => {
            let stats = batch_stats(x);
            let n = (x.batch() * x.plane()) as f64;
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let mut next = p.clone();
            for c in 0..p.channels() {
                next.running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] + p.momentum * stats.mean[c];
                next.running_var[c] = (1.0 - p.momentum) * p.running_var[c] + p.momentum * stats.var[c] * unbias;
            }
            Ok((normalize(x, p, &stats), stats, next))
        }
    }
}

pub fn bn_forward(x: &Tensor, p: &BnParams, mode: BnMode) -> Result<(Tensor, BnParams)> {
    let (y, _, next) = bn_forward_full(x, p, mode)?;
    Ok((y, next))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn bn_backward(
    x: &Tensor,
    p: &BnParams,
    mode: BnMode,
    stats: &BnStats,
    dy: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    check_bn(x, p)?;
    if dy.shape() != x.shape() {
        return Err(Error::shape("batch norm backward", x.shape(), dy.shape()));
    }
    let [nb, nc, ..] = x.shape();
    let plane = x.plane();
    let n = (nb * plane) as f64;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = vec![0.0; nc];
    let mut dbeta = vec![0.0; nc];
    for c in 0..nc {
        let inv_std = 1.0 / (stats.var[c] + p.eps).sqrt();
        let mean = stats.mean[c];
        let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
        for b in 0..nb {
            for (g, v) in dy.plane_slice(b, c).iter().zip(x.plane_slice(b, c)) {
                sum_dy += g;
                sum_dy_xhat += g * (v - mean) * inv_std;
            }
        }
        dgamma[c] = sum_dy_xhat;
        dbeta[c] = sum_dy;
        let gscale = p.gamma[c] * inv_std;
        for b in 0..nb {
            let start = (b * nc + c) * plane;
            let gs = dy.plane_slice(b, c);
            let xs = x.plane_slice(b, c);
            let dst = &mut dx.data_mut()[start..start + plane];
            match mode {
                BnMode::Infer => {
                    for (d, g) in dst.iter_mut().zip(gs) {
                        *d = g * gscale;
                    }
                }
                BnMode::Train => {
                    for ((d, g), v) in dst.iter_mut().zip(gs).zip(xs) {
                        let xhat = (v - mean) * inv_std;
                        *d = gscale * (g - sum_dy / n - xhat * sum_dy_xhat / n);
                    }
                }
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, v) in dx.data_mut().iter_mut().zip(x.data()) {
        if *v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

pub const RELU6_CAP: f64 = 6.0;

pub fn relu6_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.clamp(0.0, RELU6_CAP))
}

/// Gradient flows only where `0 < x < 6`.
pub fn relu6_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, v) in dx.data_mut().iter_mut().zip(x.data()) {
        if *v <= 0.0 || *v >= RELU6_CAP {
            *d = 0.0;
        }
    }
    dx
}

fn check_even(op: &'static str, x: &Tensor) -> Result<()> {
    if !x.height().is_multiple_of(2) || !x.width().is_multiple_of(2) {
        return Err(Error::OddSpatial {
            op,
            height: x.height(),
            width: x.width(),
        });
    }
    Ok(())
}

pub fn maxpool2_forward(x: &Tensor) -> Result<Tensor> {
    check_even("maxpool2", x)?;
    let [nb, nc, nh, nw] = x.shape();
    let (oh, ow) = (nh / 2, nw / 2);
    let mut out = Tensor::zeros([nb, nc, oh, ow]);
    let mut i = 0;
    for b in 0..nb {
        for c in 0..nc {
            let p = x.plane_slice(b, c);
            for h in 0..oh {
                let r0 = &p[2 * h * nw..(2 * h + 1) * nw];
                let r1 = &p[(2 * h + 1) * nw..(2 * h + 2) * nw];
                for w in 0..ow {
                    out.data_mut()[i] = r0[2 * w].max(r0[2 * w + 1]).max(r1[2 * w]).max(r1[2 * w + 1]);
                    i += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Routes each window's gradient to its first maximal element (row-major scan).
pub fn maxpool2_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    check_even("maxpool2 backward", x)?;
    let [nb, nc, nh, nw] = x.shape();
    let (oh, ow) = (nh / 2, nw / 2);
    if dy.shape() != [nb, nc, oh, ow] {
        return Err(Error::shape("maxpool2 backward", [nb, nc, oh, ow], dy.shape()));
    }
    let mut dx = Tensor::zeros(x.shape());
    for b in 0..nb {
        for c in 0..nc {
            for h in 0..oh {
                for w in 0..ow {
                    let mut best = (2 * h, 2 * w);
                    let mut best_v = x.at(b, c, 2 * h, 2 * w);
                    for (dh, dw) in [(0, 1), (1, 0), (1, 1)] {
                        let v = x.at(b, c, 2 * h + dh, 2 * w + dw);
                        if v > best_v {
                            best_v = v;
                            best = (2 * h + dh, 2 * w + dw);
                        }
                    }
                    let i = dx.index(b, c, best.0, best.1);
                    dx.data_mut()[i] += dy.at(b, c, h, w);
                }
            }
        }
    }
    Ok(dx)
}

/// Space-to-depth reordering with block 2.
///
/// Output channel `(dy * 2 + dx) * C + c` at `(i, j)` holds input channel `c`
/// at `(2i + dy, 2j + dx)`: sub-pixel offsets are row-major and offset-major
/// over the input channels. For a single 2x2 channel `[[a, b], [c, d]]` the
/// four output channels hold `a, b, c, d` in that order.
pub fn reorder_forward(x: &Tensor) -> Result<Tensor> {
    check_even("reorder", x)?;
    let [nb, nc, nh, nw] = x.shape();
    let (oh, ow) = (nh / 2, nw / 2);
    let mut out = Tensor::zeros([nb, 4 * nc, oh, ow]);
    for b in 0..nb {
        for off in 0..4 {
            let (dy, dx) = (off / 2, off % 2);
            for c in 0..nc {
                let src = x.plane_slice(b, c);
                let start = out.index(b, off * nc + c, 0, 0);
                let dst = &mut out.data_mut()[start..start + oh * ow];
                for i in 0..oh {
                    let srow = &src[(2 * i + dy) * nw..];
                    for j in 0..ow {
                        dst[i * ow + j] = srow[2 * j + dx];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`reorder_forward`] (depth-to-space). Also its backward pass.
pub fn reorder_inverse(y: &Tensor) -> Result<Tensor> {
    let [nb, c4, oh, ow] = y.shape();
    if c4 % 4 != 0 {
        return Err(Error::InvalidShape {
            shape: y.shape().to_vec(),
            reason: "inverse reorder needs a channel count divisible by 4".into(),
        });
    }
    let nc = c4 / 4;
    let (nh, nw) = (2 * oh, 2 * ow);
    let mut out = Tensor::zeros([nb, nc, nh, nw]);
    for b in 0..nb {
        for off in 0..4 {
            let (dy, dx) = (off / 2, off % 2);
            for c in 0..nc {
                let src = y.plane_slice(b, off * nc + c);
                let start = out.index(b, c, 0, 0);
                let dst = &mut out.data_mut()[start..start + nh * nw];
                for i in 0..oh {
                    for j in 0..ow {
                        dst[(2 * i + dy) * nw + 2 * j + dx] = src[i * ow + j];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Channel concatenation; `a`'s channels precede `b`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [na, ca, ha, wa] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if na != nb || ha != hb || wa != wb {
        return Err(Error::shape("concat_channels", a.shape(), b.shape()));
    }
    let plane = ha * wa;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for s in 0..na {
        data.extend_from_slice(&a.data()[s * ca * plane..(s + 1) * ca * plane]);
        data.extend_from_slice(&b.data()[s * cb * plane..(s + 1) * cb * plane]);
    }
    Tensor::from_vec([na, ca + cb, ha, wa], data)
}

/// Splits channels at `first`; inverse of [`concat_channels`] and its backward pass.
pub fn split_channels(x: &Tensor, first: usize) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w] = x.shape();
    if first == 0 || first >= c {
        return Err(Error::InvalidArgument(format!(
            "split point {first} out of range for {c} channels"
        )));
    }
    let plane = h * w;
    let mut a = Vec::with_capacity(n * first * plane);
    let mut b = Vec::with_capacity(n * (c - first) * plane);
    for s in 0..n {
        let sample = x.sample_slice(s);
        a.extend_from_slice(&sample[..first * plane]);
        b.extend_from_slice(&sample[first * plane..]);
    }
    Ok((
        Tensor::from_vec([n, first, h, w], a)?,
        Tensor::from_vec([n, c - first, h, w], b)?,
    ))
}
