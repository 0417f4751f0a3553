//! Measurements shared by the core suites and the acceptance gate. Each
//! returns the observed worst case so callers apply their own tolerance.

use bundlenas_core::kernels::{self, BnMode, BnParams, ConvWeights};
use bundlenas_core::quant::InferenceGraph;
use bundlenas_core::{Activation, Anchor, Bypass, FeatureShape, Network, NetworkGenome, Tensor};
use rand::Rng;

use super::*;

pub const LAYERS: [&str; 7] = ["dwconv3", "pwconv1", "batchnorm", "relu", "relu6", "maxpool2", "reorder"];

fn rand_bn(rng: &mut impl Rng, c: usize) -> BnParams {
    BnParams {
        gamma: rand_vec(rng, c, 0.5, 1.5),
        beta: rand_vec(rng, c, -0.5, 0.5),
        running_mean: rand_vec(rng, c, -0.5, 0.5),
        running_var: rand_vec(rng, c, 0.2, 2.0),
        eps: BnParams::DEFAULT_EPS,
        momentum: BnParams::DEFAULT_MOMENTUM,
    }
}

fn maybe_bias(rng: &mut impl Rng, c: usize) -> Option<Vec<f64>> {
    rng.random_bool(0.5).then(|| rand_vec(rng, c, -1.0, 1.0))
}

/// Forward output of the library kernel and the naive oracle for one random case.
pub fn oracle_case(layer: &str, rng: &mut impl Rng) -> (Tensor, Tensor) {
    let even = matches!(layer, "maxpool2" | "reorder");
    let s = rand_shape(rng, 6, 10, even);
    // ReLU6 needs inputs on both sides of 6.
    let x = rand_tensor(rng, s, -8.0, 8.0);
    let c = s[1];
    match layer {
        "dwconv3" => {
            let w = rand_vec(rng, 9 * c, -1.0, 1.0);
            let b = maybe_bias(rng, c);
            let cw = ConvWeights::depthwise(c, w.clone(), b.clone()).unwrap();
            (kernels::dwconv3_forward(&x, &cw).unwrap(), naive_dwconv3(&x, &w, b.as_deref()))
        }
        "pwconv1" => {
            let cout = rng.random_range(1..=7);
            let w = rand_vec(rng, cout * c, -1.0, 1.0);
            let b = maybe_bias(rng, cout);
            let cw = ConvWeights::pointwise(cout, c, w.clone(), b.clone()).unwrap();
            (kernels::pwconv1_forward(&x, &cw).unwrap(), naive_pwconv1(&x, &w, cout, b.as_deref()))
        }
        "batchnorm" => {
            let p = rand_bn(rng, c);
            if rng.random_bool(0.5) {
                let (m, v) = naive_stats(&x);
                let got = kernels::bn_forward(&x, &p, BnMode::Train).unwrap().0;
                (got, naive_bn(&x, &p.gamma, &p.beta, &m, &v, p.eps))
            } else {
                let got = kernels::bn_forward(&x, &p, BnMode::Infer).unwrap().0;
                (got, naive_bn(&x, &p.gamma, &p.beta, &p.running_mean, &p.running_var, p.eps))
            }
        }
        "relu" => (kernels::relu_forward(&x), naive_relu(&x)),
        "relu6" => (kernels::relu6_forward(&x), naive_relu6(&x)),
        "maxpool2" => (kernels::maxpool2_forward(&x).unwrap(), naive_maxpool2(&x)),
        "reorder" => (kernels::reorder_forward(&x).unwrap(), naive_reorder(&x)),
        other => panic!("unknown layer {other}"),
    }
}

/// Worst absolute forward difference per layer over `cases` random cases.
pub fn kernel_oracle_max_diff(cases: usize, seed: u64) -> Vec<(&'static str, f64)> {
    LAYERS
        .iter()
        .enumerate()
        .map(|(k, &layer)| {
            let mut r = rng(seed ^ (k as u64 * 0x9e37));
            let worst = (0..cases)
                .map(|_| {
                    let (got, want) = oracle_case(layer, &mut r);
                    assert_eq!(got.shape(), want.shape(), "{layer} shape");
                    got.max_abs_diff(&want)
                })
                .fold(0.0, f64::max);
            (layer, worst)
        })
        .collect()
}

/// Input avoiding kinks: nothing near 0 or 6, no near-ties in a pooling window.
fn smooth_input(rng: &mut impl Rng, s: [usize; 4]) -> Tensor {
    let mut x = rand_tensor(rng, s, -2.0, 8.0);
    for v in x.data_mut() {
        if v.abs() < 0.05 || (*v - 6.0).abs() < 0.05 {
            *v += 0.2;
        }
    }
    x
}

fn separated_windows(rng: &mut impl Rng, s: [usize; 4]) -> Tensor {
    // Distinct values per window spaced well beyond the probe step.
    let mut x = Tensor::zeros(s);
    let [nb, nc, nh, nw] = s;
    for b in 0..nb {
        for c in 0..nc {
            for i in (0..nh).step_by(2) {
                for j in (0..nw).step_by(2) {
                    let mut levels = [0.0, 0.25, 0.5, 0.75];
                    for k in (1..4).rev() {
                        levels.swap(k, rng.random_range(0..=k));
                    }
                    let base = rng.random_range(-2.0..2.0);
                    for (k, lv) in levels.iter().enumerate() {
                        x.set(b, c, i + k / 2, j + k % 2, base + lv);
                    }
                }
            }
        }
    }
    x
}

/// Worst relative error between analytic and central-difference gradients
/// of `L = sum(y * r)` for one random case, over inputs and parameters.
pub fn gradient_case(layer: &str, rng: &mut impl Rng, h: f64) -> f64 {
    let even = matches!(layer, "maxpool2" | "reorder");
    let s = rand_shape(rng, 4, 6, even);
    let c = s[1];
    let x = match layer {
        "maxpool2" => separated_windows(rng, s),
        _ => smooth_input(rng, s),
    };
    let with = |data: &[f64]| Tensor::from_vec(s, data.to_vec()).unwrap();
    let floor = 1e-3;
    match layer {
        "dwconv3" | "pwconv1" => {
            let dw = layer == "dwconv3";
            let cout = if dw { c } else { rng.random_range(1..=5) };
            let nw = if dw { 9 * c } else { cout * c };
            let w = rand_vec(rng, nw, -1.0, 1.0);
            let bv = rand_vec(rng, cout, -1.0, 1.0);
            let make = |w: &[f64], b: &[f64]| {
                if dw {
                    ConvWeights::depthwise(c, w.to_vec(), Some(b.to_vec())).unwrap()
                } else {
                    ConvWeights::pointwise(cout, c, w.to_vec(), Some(b.to_vec())).unwrap()
                }
            };
            let fwd = |x: &Tensor, cw: &ConvWeights| {
                if dw {
                    kernels::dwconv3_forward(x, cw).unwrap()
                } else {
                    kernels::pwconv1_forward(x, cw).unwrap()
                }
            };
            let cw = make(&w, &bv);
            let y = fwd(&x, &cw);
            let r = rand_tensor(rng, y.shape(), -1.0, 1.0);
            let (dx, g) = if dw {
                kernels::dwconv3_backward(&x, &cw, &r).unwrap()
            } else {
                kernels::pwconv1_backward(&x, &cw, &r).unwrap()
            };
            let nx = numeric_grad(x.data(), h, |d| dot(fwd(&with(d), &cw).data(), r.data()));
            let nwg = numeric_grad(&w, h, |d| dot(fwd(&x, &make(d, &bv)).data(), r.data()));
            let nbg = numeric_grad(&bv, h, |d| dot(fwd(&x, &make(&w, d)).data(), r.data()));
            max_rel_err(dx.data(), &nx, floor)
                .max(max_rel_err(&g.weights, &nwg, floor))
                .max(max_rel_err(g.bias.as_deref().unwrap_or_default(), &nbg, floor))
        }
        "batchnorm" => {
            let p = rand_bn(rng, c);
            let mode = if rng.random_bool(0.5) { BnMode::Train } else { BnMode::Infer };
            let (y, stats, _) = kernels::bn_forward_full(&x, &p, mode).unwrap();
            let r = rand_tensor(rng, y.shape(), -1.0, 1.0);
            let (dx, dg, db) = kernels::bn_backward(&x, &p, mode, &stats, &r).unwrap();
            let loss = |x: &Tensor, p: &BnParams| dot(kernels::bn_forward(x, p, mode).unwrap().0.data(), r.data());
            let nx = numeric_grad(x.data(), h, |d| loss(&with(d), &p));
            let ng = numeric_grad(&p.gamma, h, |d| loss(&x, &BnParams { gamma: d.to_vec(), ..p.clone() }));
            let nb = numeric_grad(&p.beta, h, |d| loss(&x, &BnParams { beta: d.to_vec(), ..p.clone() }));
            max_rel_err(dx.data(), &nx, floor)
                .max(max_rel_err(&dg, &ng, floor))
                .max(max_rel_err(&db, &nb, floor))
        }
        "relu" | "relu6" | "maxpool2" | "reorder" => {
            let fwd = |x: &Tensor| match layer {
                "relu" => kernels::relu_forward(x),
                "relu6" => kernels::relu6_forward(x),
                "maxpool2" => kernels::maxpool2_forward(x).unwrap(),
                _ => kernels::reorder_forward(x).unwrap(),
            };
            let y = fwd(&x);
            let r = rand_tensor(rng, y.shape(), -1.0, 1.0);
            let dx = match layer {
                "relu" => kernels::relu_backward(&x, &r),
                "relu6" => kernels::relu6_backward(&x, &r),
                "maxpool2" => kernels::maxpool2_backward(&x, &r).unwrap(),
                // Reorder is a permutation, so its adjoint is the inverse.
                _ => kernels::reorder_inverse(&r).unwrap(),
            };
            let nx = numeric_grad(x.data(), h, |d| dot(fwd(&with(d)).data(), r.data()));
            max_rel_err(dx.data(), &nx, floor)
        }
        other => panic!("unknown layer {other}"),
    }
}

pub fn gradient_max_rel_err(cases: usize, seed: u64, h: f64) -> Vec<(&'static str, f64)> {
    LAYERS
        .iter()
        .enumerate()
        .map(|(k, &layer)| {
            let mut r = rng(seed ^ (k as u64 * 0x51ed));
            let worst = (0..cases).map(|_| gradient_case(layer, &mut r, h)).fold(0.0, f64::max);
            (layer, worst)
        })
        .collect()
}

/// Counts reorder round-trip failures and shape-law violations over random tensors.
pub fn reorder_failures(count: usize, seed: u64) -> (usize, usize) {
    let mut r = rng(seed);
    let (mut round_trip, mut shape_law) = (0, 0);
    for _ in 0..count {
        let s = rand_shape(&mut r, 8, 16, true);
        let x = rand_tensor(&mut r, s, -1.0, 1.0);
        let y = kernels::reorder_forward(&x).unwrap();
        if y.shape() != [s[0], 4 * s[1], s[2] / 2, s[3] / 2] {
            shape_law += 1;
        }
        if kernels::reorder_inverse(&y).unwrap() != x {
            round_trip += 1;
        }
    }
    (round_trip, shape_law)
}

fn rand_small_genome(rng: &mut impl Rng) -> NetworkGenome {
    let depth = rng.random_range(2..=4);
    let fv1 = (0..depth).map(|_| [4, 6, 8, 12][rng.random_range(0..4)]).collect();
    let mut fv2 = vec![false; depth];
    for p in fv2.iter_mut().take(depth - 1) {
        *p = rng.random_bool(0.5);
    }
    let bypass = (depth >= 3 && rng.random_bool(0.5)).then_some(Bypass { source: 1, dest: depth });
    NetworkGenome {
        bundle_id: 0,
        fv1,
        fv2,
        bypass,
        activation: if rng.random_bool(0.5) { Activation::Relu } else { Activation::Relu6 },
    }
}

/// Network with randomised batch-norm statistics so folding is non-trivial.
pub fn random_network(rng: &mut impl Rng) -> Network {
    let g = rand_small_genome(rng);
    let anchors = [Anchor { w: 0.1, h: 0.1 }, Anchor { w: 0.3, h: 0.2 }];
    let mut net = Network::init(&g, FeatureShape::new(3, 16, 32), anchors, rng).unwrap();
    for p in &mut net.params {
        if let bundlenas_core::tape::Param::Bn(b) = p {
            *b = rand_bn(rng, b.channels());
        }
    }
    net
}

/// Worst output difference between BN-in-graph and BN-folded inference.
pub fn bn_fold_max_diff(nets: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..nets)
        .map(|_| {
            let net = random_network(&mut r);
            let graph = InferenceGraph::from_network(&net).unwrap();
            let folded = graph.fold_bn().unwrap();
            assert!(!folded.has_bn());
            let x = rand_tensor(&mut r, [2, 3, 16, 32], 0.0, 1.0);
            graph.forward(&x).unwrap().max_abs_diff(&folded.forward(&x).unwrap())
        })
        .fold(0.0, f64::max)
}
