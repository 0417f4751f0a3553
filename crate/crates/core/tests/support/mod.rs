//! Naive reference implementations and numeric helpers shared by the
//! integration suites. Written index-by-index, independent of the library's
//! kernels.
#![allow(dead_code)]

pub mod checks;

use bundlenas_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn rand_tensor(rng: &mut impl Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor {
    Tensor::from_vec(shape, rand_vec(rng, shape.iter().product(), lo, hi)).unwrap()
}

/// Random shape with the given spatial parity.
pub fn rand_shape(rng: &mut impl Rng, max_c: usize, max_hw: usize, even: bool) -> [usize; 4] {
    let mut dim = |max: usize| {
        if even {
            2 * rng.random_range(1..=max / 2)
        } else {
            rng.random_range(1..=max)
        }
    };
    let (h, w) = (dim(max_hw), dim(max_hw));
    [rng.random_range(1..=3), rng.random_range(1..=max_c), h, w]
}

pub fn naive_dwconv3(x: &Tensor, w: &[f64], bias: Option<&[f64]>) -> Tensor {
    let [nb, nc, nh, nw] = x.shape();
    let mut y = Tensor::zeros(x.shape());
    for b in 0..nb {
        for c in 0..nc {
            for i in 0..nh {
                for j in 0..nw {
                    let mut s = bias.map_or(0.0, |v| v[c]);
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (ii, jj) = (i as i64 + ky as i64 - 1, j as i64 + kx as i64 - 1);
                            if ii >= 0 && jj >= 0 && (ii as usize) < nh && (jj as usize) < nw {
                                s += w[c * 9 + ky * 3 + kx] * x.at(b, c, ii as usize, jj as usize);
                            }
                        }
                    }
                    y.set(b, c, i, j, s);
                }
            }
        }
    }
    y
}

pub fn naive_pwconv1(x: &Tensor, w: &[f64], cout: usize, bias: Option<&[f64]>) -> Tensor {
    let [nb, cin, nh, nw] = x.shape();
    let mut y = Tensor::zeros([nb, cout, nh, nw]);
    for b in 0..nb {
        for o in 0..cout {
            for i in 0..nh {
                for j in 0..nw {
                    let mut s = bias.map_or(0.0, |v| v[o]);
                    for c in 0..cin {
                        s += w[o * cin + c] * x.at(b, c, i, j);
                    }
                    y.set(b, o, i, j, s);
                }
            }
        }
    }
    y
}

/// Per-channel mean and biased variance.
pub fn naive_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let [nb, nc, nh, nw] = x.shape();
    let n = (nb * nh * nw) as f64;
    let mut mean = vec![0.0; nc];
    let mut var = vec![0.0; nc];
    for c in 0..nc {
        let vals: Vec<f64> = (0..nb)
            .flat_map(|b| (0..nh).flat_map(move |i| (0..nw).map(move |j| (b, i, j))))
            .map(|(b, i, j)| x.at(b, c, i, j))
            .collect();
        mean[c] = vals.iter().sum::<f64>() / n;
        var[c] = vals.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / n;
    }
    (mean, var)
}

pub fn naive_bn(x: &Tensor, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Tensor {
    Tensor::from_fn(x.shape(), |b, c, i, j| {
        gamma[c] * (x.at(b, c, i, j) - mean[c]) / (var[c] + eps).sqrt() + beta[c]
    })
}

pub fn naive_relu(x: &Tensor) -> Tensor {
    Tensor::from_fn(x.shape(), |b, c, i, j| x.at(b, c, i, j).max(0.0))
}

pub fn naive_relu6(x: &Tensor) -> Tensor {
    Tensor::from_fn(x.shape(), |b, c, i, j| x.at(b, c, i, j).clamp(0.0, 6.0))
}

pub fn naive_maxpool2(x: &Tensor) -> Tensor {
    let [nb, nc, nh, nw] = x.shape();
    Tensor::from_fn([nb, nc, nh / 2, nw / 2], |b, c, i, j| {
        let v = [
            x.at(b, c, 2 * i, 2 * j),
            x.at(b, c, 2 * i, 2 * j + 1),
            x.at(b, c, 2 * i + 1, 2 * j),
            x.at(b, c, 2 * i + 1, 2 * j + 1),
        ];
        v.into_iter().fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Space-to-depth: output channel `(dy*2+dx)*C + c` at `(i, j)` is input
/// channel `c` at `(2i+dy, 2j+dx)`.
pub fn naive_reorder(x: &Tensor) -> Tensor {
    let [nb, nc, nh, nw] = x.shape();
    Tensor::from_fn([nb, 4 * nc, nh / 2, nw / 2], |b, oc, i, j| {
        let (off, c) = (oc / nc, oc % nc);
        x.at(b, c, 2 * i + off / 2, 2 * j + off % 2)
    })
}

pub fn naive_concat(a: &Tensor, b: &Tensor) -> Tensor {
    let ca = a.channels();
    let [nb, _, nh, nw] = a.shape();
    Tensor::from_fn([nb, ca + b.channels(), nh, nw], |n, c, i, j| {
        if c < ca {
            a.at(n, c, i, j)
        } else {
            b.at(n, c - ca, i, j)
        }
    })
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Parameter count of a chain of `DW3, BN, ReLU, PW1, BN, ReLU` bundles
/// walked by hand: each bundle's input channels are the previous width,
/// plus `4^pools` times the tapped width where a bypass lands; the head is a
/// biased 1x1 conv to ten channels.
pub fn walk_bundle0_params(widths: &[usize], pools: &[bool], bypass: Option<(usize, usize)>) -> usize {
    let mut total = 0;
    let mut cin = 3;
    for (k, &cout) in widths.iter().enumerate() {
        let bundle = k + 1;
        if let Some((src, dst)) = bypass {
            if dst == bundle {
                let reorders = pools[src - 1..dst - 1].iter().filter(|&&p| p).count() as u32;
                cin += widths[src - 1] * 4usize.pow(reorders);
            }
        }
        total += 9 * cin; // depthwise weights (BN follows, no bias)
        total += 2 * cin; // BN gamma, beta
        total += cin * cout; // pointwise weights
        total += 2 * cout; // BN gamma, beta
        cin = cout;
    }
    total + cin * 10 + 10
}
