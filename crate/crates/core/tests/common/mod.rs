//! Brute-force reference implementations used as independent oracles.
#![allow(dead_code)]

use fads::engine::{forward, ActivationRecord, TapPoint};
use fads::graph::{LayerKind, LayerSpec, NetworkGraph};
use fads::rng::SplitMix64;
use fads::{GradMode, Tensor, WeightStore};

pub fn random_tensor(rng: &mut SplitMix64, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.symmetric(scale) as f32).collect()).unwrap()
}

pub fn random_positive(rng: &mut SplitMix64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.range(lo, hi) as f32).collect()).unwrap()
}

/// Six nested loops, one output element at a time.
pub fn conv_oracle(x: &Tensor, k: &Tensor, bias: &[f32], stride: usize, pad: usize) -> Vec<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Vec::new();
    for oc in 0..o {
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = bias[oc] as f64;
                for ic in 0..c {
                    for u in 0..kh {
                        for v in 0..kw {
                            let iy = (y * stride + u) as isize - pad as isize;
                            let ix = (xx * stride + v) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                s += x.data()[(ic * h + iy as usize) * w + ix as usize] as f64
                                    * k.data()[((oc * c + ic) * kh + u) * kw + v] as f64;
                            }
                        }
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

/// Scans each window and returns (value, argmax) per output.
pub fn maxpool_oracle(x: &Tensor, window: usize, stride: usize) -> Vec<(f32, usize)> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Vec::new();
    for ch in 0..c {
        for y in 0..(h - window) / stride + 1 {
            for xx in 0..(w - window) / stride + 1 {
                let mut best: Option<(f32, usize)> = None;
                for u in 0..window {
                    for v in 0..window {
                        let idx = (ch * h + y * stride + u) * w + xx * stride + v;
                        let val = x.data()[idx];
                        if best.is_none_or(|(b, _)| val > b) {
                            best = Some((val, idx));
                        }
                    }
                }
                out.push(best.unwrap());
            }
        }
    }
    out
}

pub fn batchnorm_oracle(x: &Tensor, mean: &[f32], var: &[f32], gamma: &[f32], beta: &[f32], eps: f32) -> Vec<f64> {
    let plane = x.shape()[1] * x.shape()[2];
    x.data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / plane;
            (v as f64 - mean[c] as f64) / (var[c] as f64 + eps as f64).sqrt() * gamma[c] as f64 + beta[c] as f64
        })
        .collect()
}

/// Explicit two-pass mean and population standard deviation per column.
pub fn two_pass_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            var[j] += (r[j] - mean[j]).powi(2);
        }
    }
    (mean, var.into_iter().map(|v| (v / n).sqrt()).collect())
}

/// Counts concordant and tied (anomaly, nominal) pairs directly.
pub fn auc_all_pairs(nominal: &[f64], anomaly: &[f64]) -> f64 {
    let (mut concordant, mut ties) = (0u64, 0u64);
    for &a in anomaly {
        for &n in nominal {
            if a > n {
                concordant += 1;
            } else if a == n {
                ties += 1;
            }
        }
    }
    (concordant as f64 + 0.5 * ties as f64) / (anomaly.len() * nominal.len()) as f64
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

/// Linear functional `sum_i <seed_i, map_i>` of the recorded filter maps.
pub fn functional(rec: &ActivationRecord, seeds: &[(usize, Tensor)]) -> f64 {
    seeds
        .iter()
        .map(|(i, s)| {
            rec.filter_maps()[*i]
                .data()
                .iter()
                .zip(s.data())
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum::<f64>()
        })
        .sum()
}

/// ReLU input signs and pooling winners: the record's piecewise-linear region.
pub fn activation_pattern(graph: &NetworkGraph, rec: &ActivationRecord) -> Vec<Vec<usize>> {
    let mut pattern = Vec::new();
    for (i, layer) in graph.layers().iter().enumerate() {
        match layer.kind {
            LayerKind::Relu => {
                let src = match graph.sources(i)[0] {
                    fads::graph::Source::Input => rec.input(),
                    fads::graph::Source::Layer(j) => &rec.outputs()[j],
                };
                pattern.push(src.data().iter().map(|&v| (v > 0.0) as usize).collect());
            }
            LayerKind::Maxpool { .. } => pattern.push(rec.argmax(i).unwrap().to_vec()),
            _ => {}
        }
    }
    pattern
}

pub struct FdOutcome {
    pub checked: usize,
    pub worst_rel: f64,
    pub worst_abs_small: f64,
}

/// Compares `grad` with central differences of the seeded functional at
/// `want` random pixels whose +-h perturbations stay in the same
/// piecewise-linear region (kinks are not differentiable).
pub fn finite_difference_check(
    graph: &NetworkGraph,
    weights: &WeightStore,
    image: &Tensor,
    seeds: &[(usize, Tensor)],
    grad: &Tensor,
    h: f32,
    want: usize,
    rng: &mut SplitMix64,
) -> FdOutcome {
    let base = forward(graph, weights, image, TapPoint::Pre).unwrap();
    let pattern = activation_pattern(graph, &base);
    let mut out = FdOutcome { checked: 0, worst_rel: 0.0, worst_abs_small: 0.0 };
    let mut attempts = 0;
    while out.checked < want {
        attempts += 1;
        assert!(attempts < 50 * want, "too many pixels sit on kinks");
        let p = rng.below(image.numel() as u64) as usize;
        let eval = |delta: f32| {
            let mut x = image.clone();
            x.data_mut()[p] += delta;
            forward(graph, weights, &x, TapPoint::Pre).unwrap()
        };
        let (plus, minus) = (eval(h), eval(-h));
        if activation_pattern(graph, &plus) != pattern || activation_pattern(graph, &minus) != pattern {
            continue;
        }
        let numeric = (functional(&plus, seeds) - functional(&minus, seeds)) / (2.0 * h as f64);
        let analytic = grad.data()[p] as f64;
        if analytic.abs() < 1e-3 && numeric.abs() < 1e-3 {
            out.worst_abs_small = out.worst_abs_small.max((analytic - numeric).abs());
        } else {
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            out.worst_rel = out.worst_rel.max(rel);
        }
        out.checked += 1;
    }
    out
}

pub fn vanilla_grad(graph: &NetworkGraph, weights: &WeightStore, image: &Tensor, seeds: &[(usize, Tensor)]) -> Tensor {
    let rec = forward(graph, weights, image, TapPoint::Pre).unwrap();
    fads::backward(&rec, graph, weights, seeds, GradMode::Vanilla).unwrap()
}

/// Positive kernels, biases, inputs and seeds keep every ReLU input and every
/// upstream gradient positive, so the guided and vanilla rules coincide.
pub fn all_positive_case(seed: u64) -> (NetworkGraph, WeightStore, Tensor, Vec<(usize, Tensor)>) {
    let mut rng = SplitMix64::new(seed);
    let conv = |out| LayerKind::Conv2d { out, kh: 3, kw: 3, stride: 1, pad: 1 };
    let g = NetworkGraph::new(
        "positive",
        [1, 12, 12],
        vec![
            LayerSpec::new("c1", conv(3)),
            LayerSpec::new("r1", LayerKind::Relu),
            LayerSpec::new("p1", LayerKind::Maxpool { window: 2, stride: 2 }),
            LayerSpec::new("c2", conv(4)),
            LayerSpec::new("r2", LayerKind::Relu),
        ],
    )
    .unwrap();
    let mut w = WeightStore::new();
    for (name, shape) in g.required_parameters() {
        let (layer, param) = name.split_once('.').unwrap();
        w.insert(layer, param, random_positive(&mut rng, &shape, 0.05, 0.5));
    }
    let img = random_positive(&mut rng, &[1, 12, 12], 0.1, 1.0);
    let rec = forward(&g, &w, &img, TapPoint::Pre).unwrap();
    let seeds = (0..rec.filter_count())
        .map(|i| (i, random_positive(&mut rng, rec.filter_maps()[i].shape(), 0.1, 1.0)))
        .collect();
    (g, w, img, seeds)
}
