//! Central finite differences on independent f64 reference implementations.
//!
//! Each check draws a random small instance from N(0,1), builds the op on a
//! [`Graph`], backpropagates `sum(out * r)` for a random probe `r`, and
//! compares every input gradient against central differences (h = 1e-3) of
//! the f64 reference evaluated at the same f32 point.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sparselab::tensor::{BatchNormMode, Graph, NodeId};
use sparselab::Tensor;

pub const H: f64 = 1e-3;
pub const TOL: f64 = 1e-4;
/// Instances whose kink or tie margin falls below this are redrawn.
const MARGIN: f64 = 0.02;

pub struct OpReport {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.instances >= 20 && self.max_rel_error < TOL
    }
}

/// Elementwise relative error, floored at unit magnitude so that gradients
/// near zero are compared absolutely.
pub fn rel_error(analytic: &[f32], reference: &[f64]) -> f64 {
    assert_eq!(analytic.len(), reference.len());
    analytic
        .iter()
        .zip(reference)
        .map(|(&a, &b)| (a as f64 - b).abs() / b.abs().max(a.abs() as f64).max(1.0))
        .fold(0.0, f64::max)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Central differences of `f` with respect to every entry of every input.
pub fn fd_grads(f: &dyn Fn(&[Vec<f64>]) -> f64, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].len()];
        for j in 0..inputs[i].len() {
            let x0 = work[i][j];
            work[i][j] = x0 + H;
            let up = f(&work);
            work[i][j] = x0 - H;
            let down = f(&work);
            work[i][j] = x0;
            g[j] = (up - down) / (2.0 * H);
        }
        out.push(g);
    }
    out
}

/// One instance: `inputs` (shape, data) become graph parameters, `build`
/// produces the output node, `reference` is the f64 forward of the same op.
/// The scalar objective is `sum(out * r)` with `r` ~ N(0,1), or the output
/// itself when it is already a scalar.
fn check_instance(
    rng: &mut ChaCha8Rng,
    inputs: &[(Vec<usize>, Vec<f32>)],
    build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId,
    reference: &dyn Fn(&[Vec<f64>]) -> Vec<f64>,
) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|(s, d)| g.param(Tensor::new(s, d.clone()).unwrap()))
        .collect();
    let out = build(&mut g, &ids);
    let out_shape = g.value(out).shape().to_vec();
    let probe: Vec<f32> = if out_shape.is_empty() {
        vec![1.0]
    } else {
        normal_vec(rng, g.value(out).len())
    };
    let root = if out_shape.is_empty() {
        out
    } else {
        let r = g.constant(Tensor::new(&out_shape, probe.clone()).unwrap());
        let m = g.mul(out, r).unwrap();
        g.sum(m)
    };
    let grads = g.backward(root).unwrap();
    let probe64 = widen(&probe);
    let objective = |xs: &[Vec<f64>]| -> f64 { reference(xs).iter().zip(&probe64).map(|(a, b)| a * b).sum() };
    let x64: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| widen(d)).collect();
    let fd = fd_grads(&objective, &x64);
    ids.iter()
        .zip(&fd)
        .map(|(&id, f)| rel_error(grads.get(id).unwrap().data(), f))
        .fold(0.0, f64::max)
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

// f64 reference ops ----------------------------------------------------------

pub fn matmul64(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv64(
    x: &[f64],
    k: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    (f, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for b in 0..n {
        for o in 0..f {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y * stride + dy) as isize - pad as isize;
                                let ix = (xo * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((b * c + ch) * h + iy as usize) * w + ix as usize]
                                    * k[((o * c + ch) * kh + dy) * kw + dx];
                            }
                        }
                    }
                    out[((b * f + o) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

fn bias64(x: &[f64], b: &[f64], channels: usize, inner: usize) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, v)| v + b[(i / inner) % channels])
        .collect()
}

fn maxpool64(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        for y in 0..oh {
            for xo in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x[(p * h + 2 * y + dy) * w + 2 * xo + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

/// Smallest gap between the two largest entries of any pooling window.
fn maxpool_margin(x: &[f32], planes: usize, h: usize, w: usize) -> f64 {
    let mut margin = f64::INFINITY;
    for p in 0..planes {
        for y in 0..h / 2 {
            for xo in 0..w / 2 {
                let mut v: Vec<f64> = (0..4)
                    .map(|q| x[(p * h + 2 * y + q / 2) * w + 2 * xo + q % 2] as f64)
                    .collect();
                v.sort_by(|a, b| b.total_cmp(a));
                margin = margin.min(v[0] - v[1]);
            }
        }
    }
    margin
}

/// Like [`maxpool_margin`] on relu output, ignoring all-zero windows whose
/// gradient vanishes whichever entry wins.
fn positive_pool_margin(x: &[f64], planes: usize, h: usize, w: usize) -> f64 {
    let mut margin = f64::INFINITY;
    for p in 0..planes {
        for y in 0..h / 2 {
            for xo in 0..w / 2 {
                let mut v: Vec<f64> = (0..4).map(|q| x[(p * h + 2 * y + q / 2) * w + 2 * xo + q % 2]).collect();
                v.sort_by(|a, b| b.total_cmp(a));
                if v[0] > 0.0 {
                    margin = margin.min(v[0] - v[1]);
                }
            }
        }
    }
    margin
}

fn batchnorm64(x: &[f64], gamma: &[f64], beta: &[f64], n: usize, c: usize, inner: usize, stats: Option<(&[f64], &[f64])>) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let idx = |i: usize, j: usize| (i * c + ch) * inner + j;
        let (mean, var) = match stats {
            Some((m, v)) => (m[ch], v[ch]),
            None => {
                let count = (n * inner) as f64;
                let mean = (0..n).flat_map(|i| (0..inner).map(move |j| (i, j))).map(|(i, j)| x[idx(i, j)]).sum::<f64>() / count;
                let var = (0..n)
                    .flat_map(|i| (0..inner).map(move |j| (i, j)))
                    .map(|(i, j)| (x[idx(i, j)] - mean).powi(2))
                    .sum::<f64>()
                    / count;
                (mean, var)
            }
        };
        let inv = 1.0 / (var + 1e-5).sqrt();
        for i in 0..n {
            for j in 0..inner {
                out[idx(i, j)] = gamma[ch] * (x[idx(i, j)] - mean) * inv + beta[ch];
            }
        }
    }
    out
}

pub fn softmax_ce64(logits: &[f64], labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.chunks_exact(k).zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

fn relu64(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

// Per-op checks -------------------------------------------------------------

type Check = fn(&mut ChaCha8Rng) -> f64;

fn matmul_case(rng: &mut ChaCha8Rng) -> f64 {
    let (m, k, n) = (dims(rng, 1, 6), dims(rng, 1, 6), dims(rng, 1, 6));
    let a = normal_vec(rng, m * k);
    let b = normal_vec(rng, k * n);
    check_instance(
        rng,
        &[(vec![m, k], a), (vec![k, n], b)],
        &|g, ids| g.matmul(ids[0], ids[1]).unwrap(),
        &|xs| matmul64(&xs[0], &xs[1], m, k, n),
    )
}

fn conv2d_case(rng: &mut ChaCha8Rng) -> f64 {
    let (n, c, f) = (dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 1, 4));
    let (h, w) = (dims(rng, 3, 7), dims(rng, 3, 7));
    let kh = dims(rng, 1, 3.min(h));
    let kw = dims(rng, 1, 3.min(w));
    let stride = dims(rng, 1, 2);
    let pad = dims(rng, 0, 1);
    let x = normal_vec(rng, n * c * h * w);
    let k = normal_vec(rng, f * c * kh * kw);
    check_instance(
        rng,
        &[(vec![n, c, h, w], x), (vec![f, c, kh, kw], k)],
        &|g, ids| g.conv2d(ids[0], ids[1], stride, pad).unwrap(),
        &|xs| conv64(&xs[0], &xs[1], (n, c, h, w), (f, kh, kw), stride, pad).0,
    )
}

fn add_bias_case(rng: &mut ChaCha8Rng) -> f64 {
    let n = dims(rng, 1, 4);
    let c = dims(rng, 1, 5);
    let spatial = if rng.random_bool(0.5) {
        vec![]
    } else {
        vec![dims(rng, 1, 4), dims(rng, 1, 4)]
    };
    let inner: usize = spatial.iter().product();
    let mut shape = vec![n, c];
    shape.extend(&spatial);
    let x = normal_vec(rng, n * c * inner);
    let b = normal_vec(rng, c);
    check_instance(
        rng,
        &[(shape, x), (vec![c], b)],
        &|g, ids| g.add_bias(ids[0], ids[1]).unwrap(),
        &|xs| bias64(&xs[0], &xs[1], c, inner),
    )
}

fn random_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = dims(rng, 1, 4);
    (0..rank).map(|_| dims(rng, 1, 4)).collect()
}

fn add_case(rng: &mut ChaCha8Rng) -> f64 {
    let s = random_shape(rng);
    let len = s.iter().product();
    let (a, b) = (normal_vec(rng, len), normal_vec(rng, len));
    check_instance(
        rng,
        &[(s.clone(), a), (s, b)],
        &|g, ids| g.add(ids[0], ids[1]).unwrap(),
        &|xs| xs[0].iter().zip(&xs[1]).map(|(p, q)| p + q).collect(),
    )
}

fn mul_case(rng: &mut ChaCha8Rng) -> f64 {
    let s = random_shape(rng);
    let len = s.iter().product();
    let (a, b) = (normal_vec(rng, len), normal_vec(rng, len));
    check_instance(
        rng,
        &[(s.clone(), a), (s, b)],
        &|g, ids| g.mul(ids[0], ids[1]).unwrap(),
        &|xs| xs[0].iter().zip(&xs[1]).map(|(p, q)| p * q).collect(),
    )
}

fn scale_case(rng: &mut ChaCha8Rng) -> f64 {
    let s = random_shape(rng);
    let a = normal_vec(rng, s.iter().product());
    let c: f32 = StandardNormal.sample(rng);
    check_instance(
        rng,
        &[(s, a)],
        &|g, ids| g.scale(ids[0], c),
        &|xs| xs[0].iter().map(|v| v * c as f64).collect(),
    )
}

fn relu_case(rng: &mut ChaCha8Rng) -> f64 {
    let s = random_shape(rng);
    let len = s.iter().product();
    let a: Vec<f32> = (0..len)
        .map(|_| loop {
            let v: f32 = StandardNormal.sample(rng);
            if (v as f64).abs() > MARGIN {
                break v;
            }
        })
        .collect();
    check_instance(rng, &[(s, a)], &|g, ids| g.relu(ids[0]), &|xs| relu64(&xs[0]))
}

fn reshape_case(rng: &mut ChaCha8Rng) -> f64 {
    let s = random_shape(rng);
    let len: usize = s.iter().product();
    let a = normal_vec(rng, len);
    let flat = rng.random_bool(0.5);
    check_instance(
        rng,
        &[(s.clone(), a)],
        &|g, ids| {
            if flat {
                g.flatten(ids[0]).unwrap()
            } else {
                g.reshape(ids[0], &[len]).unwrap()
            }
        },
        &|xs| xs[0].clone(),
    )
}

fn maxpool_case(rng: &mut ChaCha8Rng) -> f64 {
    let (n, c) = (dims(rng, 1, 2), dims(rng, 1, 3));
    let (h, w) = (dims(rng, 2, 7), dims(rng, 2, 7));
    let x = loop {
        let x = normal_vec(rng, n * c * h * w);
        if maxpool_margin(&x, n * c, h, w) > MARGIN {
            break x;
        }
    };
    check_instance(
        rng,
        &[(vec![n, c, h, w], x)],
        &|g, ids| g.maxpool2x2(ids[0]).unwrap(),
        &|xs| maxpool64(&xs[0], n * c, h, w),
    )
}

fn avgpool_case(rng: &mut ChaCha8Rng) -> f64 {
    let (n, c, h, w) = (dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 5), dims(rng, 1, 5));
    let x = normal_vec(rng, n * c * h * w);
    check_instance(
        rng,
        &[(vec![n, c, h, w], x)],
        &|g, ids| g.global_avgpool(ids[0]).unwrap(),
        &|xs| xs[0].chunks_exact(h * w).map(|p| p.iter().sum::<f64>() / (h * w) as f64).collect(),
    )
}

fn bn_shape(rng: &mut ChaCha8Rng) -> (Vec<usize>, usize, usize, usize) {
    let c = dims(rng, 1, 4);
    if rng.random_bool(0.5) {
        let n = dims(rng, 3, 8);
        (vec![n, c], n, c, 1)
    } else {
        let (n, h, w) = (dims(rng, 2, 3), dims(rng, 2, 3), dims(rng, 2, 3));
        (vec![n, c, h, w], n, c, h * w)
    }
}

fn batchnorm_train_case(rng: &mut ChaCha8Rng) -> f64 {
    let (shape, n, c, inner) = bn_shape(rng);
    let x = normal_vec(rng, n * c * inner);
    let (gamma, beta) = (normal_vec(rng, c), normal_vec(rng, c));
    check_instance(
        rng,
        &[(shape, x), (vec![c], gamma), (vec![c], beta)],
        &|g, ids| g.batchnorm(ids[0], ids[1], ids[2], BatchNormMode::Train).unwrap().0,
        &|xs| batchnorm64(&xs[0], &xs[1], &xs[2], n, c, inner, None),
    )
}

fn batchnorm_eval_case(rng: &mut ChaCha8Rng) -> f64 {
    let (shape, n, c, inner) = bn_shape(rng);
    let x = normal_vec(rng, n * c * inner);
    let (gamma, beta) = (normal_vec(rng, c), normal_vec(rng, c));
    let mean = normal_vec(rng, c);
    let var: Vec<f32> = (0..c).map(|_| rng.random_range(0.5f32..2.0)).collect();
    let (m64, v64) = (widen(&mean), widen(&var));
    check_instance(
        rng,
        &[(shape, x), (vec![c], gamma), (vec![c], beta)],
        &|g, ids| {
            let mode = BatchNormMode::Eval {
                running_mean: &mean,
                running_var: &var,
            };
            g.batchnorm(ids[0], ids[1], ids[2], mode).unwrap().0
        },
        &|xs| batchnorm64(&xs[0], &xs[1], &xs[2], n, c, inner, Some((&m64, &v64))),
    )
}

fn softmax_ce_case(rng: &mut ChaCha8Rng) -> f64 {
    let (n, k) = (dims(rng, 1, 6), dims(rng, 2, 6));
    let logits = normal_vec(rng, n * k);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    check_instance(
        rng,
        &[(vec![n, k], logits)],
        &|g, ids| g.softmax_cross_entropy(ids[0], &labels).unwrap(),
        &|xs| vec![softmax_ce64(&xs[0], &labels, k)],
    )
}

fn sum_case(rng: &mut ChaCha8Rng) -> f64 {
    let s = random_shape(rng);
    let a = normal_vec(rng, s.iter().product());
    check_instance(rng, &[(s, a)], &|g, ids| g.sum(ids[0]), &|xs| vec![xs[0].iter().sum()])
}

/// conv → bias → batchnorm → relu → maxpool → flatten → masked matmul →
/// bias → cross-entropy, differentiated with respect to every input.
fn composite_case(rng: &mut ChaCha8Rng) -> f64 {
    let (n, c, f, hw, k) = (3, 2, 3, 4, 3);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let d = f * (hw / 2) * (hw / 2);
    let mask: Vec<f32> = (0..d * k).map(|_| if rng.random_bool(0.6) { 1.0 } else { 0.0 }).collect();
    let mask64 = widen(&mask);
    let forward = |xs: &[Vec<f64>], margin: &mut f64| -> f64 {
        let (conv, oh, ow) = conv64(&xs[0], &xs[1], (n, c, hw, hw), (f, 3, 3), 1, 1);
        let biased = bias64(&conv, &xs[2], f, oh * ow);
        let normed = batchnorm64(&biased, &xs[3], &xs[4], n, f, oh * ow, None);
        *margin = normed.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let act = relu64(&normed);
        *margin = margin.min(positive_pool_margin(&act, n * f, oh, ow));
        let pooled = maxpool64(&act, n * f, oh, ow);
        let w: Vec<f64> = xs[5].iter().zip(&mask64).map(|(a, b)| a * b).collect();
        let logits = bias64(&matmul64(&pooled, &w, n, d, k), &xs[6], k, 1);
        softmax_ce64(&logits, &labels, k)
    };
    let inputs = loop {
        let inputs = vec![
            (vec![n, c, hw, hw], normal_vec(rng, n * c * hw * hw)),
            (vec![f, c, 3, 3], normal_vec(rng, f * c * 9)),
            (vec![f], normal_vec(rng, f)),
            (vec![f], normal_vec(rng, f)),
            (vec![f], normal_vec(rng, f)),
            (vec![d, k], normal_vec(rng, d * k)),
            (vec![k], normal_vec(rng, k)),
        ];
        let x64: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| widen(v)).collect();
        let mut margin = 0.0;
        forward(&x64, &mut margin);
        // Relu inputs and pooling gaps move by O(h) under each perturbation.
        if margin > MARGIN {
            break inputs;
        }
    };
    let mask_t = Tensor::new(&[d, k], mask.clone()).unwrap();
    check_instance(
        rng,
        &inputs,
        &|g, ids| {
            let conv = g.conv2d(ids[0], ids[1], 1, 1).unwrap();
            let b = g.add_bias(conv, ids[2]).unwrap();
            let (bn, _) = g.batchnorm(b, ids[3], ids[4], BatchNormMode::Train).unwrap();
            let r = g.relu(bn);
            let p = g.maxpool2x2(r).unwrap();
            let flat = g.flatten(p).unwrap();
            let m = g.constant(mask_t.clone());
            let w = g.mul(ids[5], m).unwrap();
            let logits = g.matmul(flat, w).unwrap();
            let logits = g.add_bias(logits, ids[6]).unwrap();
            g.softmax_cross_entropy(logits, &labels).unwrap()
        },
        &|xs| vec![forward(xs, &mut 0.0)],
    )
}

pub const OPS: &[(&str, Check)] = &[
    ("matmul", matmul_case),
    ("conv2d", conv2d_case),
    ("add_bias", add_bias_case),
    ("add", add_case),
    ("mul", mul_case),
    ("scale", scale_case),
    ("relu", relu_case),
    ("reshape", reshape_case),
    ("maxpool2x2", maxpool_case),
    ("global_avgpool", avgpool_case),
    ("batchnorm_train", batchnorm_train_case),
    ("batchnorm_eval", batchnorm_eval_case),
    ("softmax_cross_entropy", softmax_ce_case),
    ("sum", sum_case),
    ("composite", composite_case),
];

pub fn check_op(op: &'static str, check: Check, instances: usize, seed: u64) -> OpReport {
    let mut rng = sparselab::seed::rng(&[seed, sparselab::seed::hash_str(op)]);
    let max_rel_error = (0..instances).map(|_| check(&mut rng)).fold(0.0, f64::max);
    OpReport {
        op,
        instances,
        max_rel_error,
    }
}

pub fn check_all(instances: usize, seed: u64) -> Vec<OpReport> {
    OPS.iter().map(|&(op, check)| check_op(op, check, instances, seed)).collect()
}
