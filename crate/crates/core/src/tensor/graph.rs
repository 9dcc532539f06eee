use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const BN_EPS: f32 = 1e-5;

/// Statistics source for batch normalization.
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with stored running statistics.
    Eval {
        running_mean: &'a [f32],
        running_var: &'a [f32],
    },
}

/// Per-channel batch statistics from a training-mode batchnorm; `var` is unbiased.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Conv2d {
        x: NodeId,
        k: NodeId,
        geom: ConvGeom,
        batch: usize,
        filters: usize,
    },
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f32),
    Relu(NodeId),
    Reshape(NodeId),
    MaxPool { x: NodeId, argmax: Vec<u32> },
    GlobalAvgPool(NodeId),
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        train: bool,
    },
    SoftmaxCe {
        logits: NodeId,
        probs: Vec<f32>,
        labels: Vec<usize>,
    },
    Sum(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only operation tape. Inputs of every node precede it, so a reverse
/// sweep over node order is a valid backward schedule.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients from [`Graph::backward`], retained for leaf nodes.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Finiteness check on a node's value.
    pub fn is_finite(&self, id: NodeId) -> bool {
        self.nodes[id.0].value.is_finite()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t, true)
    }

    /// Input leaf; set `requires_grad` to differentiate with respect to it.
    pub fn input(&mut self, t: Tensor, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, t, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            0.0,
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out), rg))
    }

    /// Cross-correlation of `N×C×H×W` input with `F×C×Kh×Kw` kernels.
    pub fn conv2d(&mut self, x: NodeId, k: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        let (sx, sk) = (self.value(x).shape(), self.value(k).shape());
        if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[1] {
            return Err(Error::Dimension(format!("conv2d of {sx:?} with kernel {sk:?}")));
        }
        if stride == 0 {
            return Err(Error::Dimension("conv2d stride must be >= 1".into()));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (f, kh, kw) = (sk[0], sk[2], sk[3]);
        let (hp, wp) = (h + 2 * padding, w + 2 * padding);
        if kh > hp || kw > wp {
            return Err(Error::Dimension(format!(
                "conv2d kernel {kh}x{kw} exceeds padded input {hp}x{wp}"
            )));
        }
        let geom = ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad: padding,
            oh: (hp - kh) / stride + 1,
            ow: (wp - kw) / stride + 1,
        };
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![0.0; rows * ncols];
        let mut out = vec![0.0; n * f * ncols];
        let xd = self.value(x).data();
        let kd = self.value(k).data();
        for (i, out_i) in out.chunks_exact_mut(f * ncols).enumerate() {
            kernels::im2col(&xd[i * c * h * w..(i + 1) * c * h * w], &geom, &mut cols);
            kernels::gemm(f, rows, ncols, kd, (rows, 1), &cols, (ncols, 1), 0.0, out_i);
        }
        let rg = self.rg(x) || self.rg(k);
        let value = Tensor::from_parts(vec![n, f, geom.oh, geom.ow], out);
        Ok(self.push(
            Op::Conv2d {
                x,
                k,
                geom,
                batch: n,
                filters: f,
            },
            value,
            rg,
        ))
    }

    /// Adds a length-`F` bias along the last axis of a rank-2 input or the
    /// channel axis of a rank-4 input.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (sx, sb) = (self.value(x).shape().to_vec(), self.value(b).shape());
        let channels = match sx.len() {
            2 => sx[1],
            4 => sx[1],
            _ => 0,
        };
        if sb.len() != 1 || sb[0] != channels {
            return Err(Error::Dimension(format!("bias {sb:?} for input {sx:?}")));
        }
        let inner: usize = sx[2..].iter().product();
        let bd = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            *v += bd[(i / inner) % channels];
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Op::AddBias(x, b), Tensor::from_parts(sx, out), rg))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension(format!("{what} of {sa:?} and {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |p, q| p + q);
        let value = Tensor::from_parts(self.value(a).shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |p, q| p * q);
        let value = Tensor::from_parts(self.value(a).shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    pub fn scale(&mut self, a: NodeId, c: f32) -> NodeId {
        let value = self.value(a).map(|v| v * c);
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), value, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(a);
        self.push(Op::Relu(a), value, rg)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(Op::Reshape(a), value, rg))
    }

    /// Collapses all trailing axes into one: `N×…` → `N×D`.
    pub fn flatten(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).shape();
        if s.is_empty() {
            return Err(Error::Dimension("flatten of a scalar".into()));
        }
        let d = s[1..].iter().product();
        let n = s[0];
        self.reshape(a, &[n, d])
    }

    pub fn maxpool2x2(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(Error::Dimension(format!("maxpool2x2 on {s:?}")));
        }
        let (oh, ow) = (s[2] / 2, s[3] / 2);
        let planes = s[0] * s[1];
        let mut out = vec![0.0; planes * oh * ow];
        let argmax = kernels::maxpool2x2(self.value(x).data(), planes, s[2], s[3], &mut out);
        let rg = self.rg(x);
        let value = Tensor::from_parts(vec![s[0], s[1], oh, ow], out);
        Ok(self.push(Op::MaxPool { x, argmax }, value, rg))
    }

    /// Spatial mean: `N×C×H×W` → `N×C`.
    pub fn global_avgpool(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 4 {
            return Err(Error::Dimension(format!("global_avgpool on {s:?}")));
        }
        let hw = s[2] * s[3];
        let out: Vec<f32> = self
            .value(x)
            .data()
            .chunks_exact(hw)
            .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / hw as f64) as f32)
            .collect();
        let rg = self.rg(x);
        Ok(self.push(
            Op::GlobalAvgPool(x),
            Tensor::from_parts(vec![s[0], s[1]], out),
            rg,
        ))
    }

    /// Per-channel batch normalization over batch and spatial axes of a
    /// rank-2 (`N×C`) or rank-4 (`N×C×H×W`) input, with ε = 1e-5.
    ///
    /// In training mode the batch statistics are returned so the caller can
    /// update its running averages.
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: BatchNormMode<'_>,
    ) -> Result<(NodeId, Option<BatchStats>)> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 2 && s.len() != 4 {
            return Err(Error::Dimension(format!("batchnorm on {s:?}")));
        }
        let (n, c) = (s[0], s[1]);
        let inner: usize = s[2..].iter().product();
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(Error::Dimension(format!(
                    "batchnorm parameter {:?} for {c} channels",
                    self.value(p).shape()
                )));
            }
        }
        let xd = self.value(x).data();
        let count = n * inner;
        let (mean, var, stats) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for ch in 0..c {
                    let mut acc = 0.0f64;
                    for i in 0..n {
                        let off = (i * c + ch) * inner;
                        acc += xd[off..off + inner].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    mean[ch] = acc / count as f64;
                    let mut sq = 0.0f64;
                    for i in 0..n {
                        let off = (i * c + ch) * inner;
                        sq += xd[off..off + inner]
                            .iter()
                            .map(|&v| (v as f64 - mean[ch]).powi(2))
                            .sum::<f64>();
                    }
                    var[ch] = sq / count as f64;
                }
                let unbiased = var
                    .iter()
                    .map(|&v| {
                        if count > 1 {
                            (v * count as f64 / (count - 1) as f64) as f32
                        } else {
                            v as f32
                        }
                    })
                    .collect();
                let stats = BatchStats {
                    mean: mean.iter().map(|&m| m as f32).collect(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
            } => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(Error::Dimension(format!(
                        "running statistics of length {} for {c} channels",
                        running_mean.len()
                    )));
                }
                (
                    running_mean.iter().map(|&v| v as f64).collect(),
                    running_var.iter().map(|&v| v as f64).collect(),
                    None,
                )
            }
        };
        let inv_std: Vec<f32> = var
            .iter()
            .map(|&v| (1.0 / (v + BN_EPS as f64).sqrt()) as f32)
            .collect();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![0.0f32; xd.len()];
        let mut out = vec![0.0f32; xd.len()];
        for (idx, (&v, (xh, o))) in xd.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let ch = (idx / inner) % c;
            *xh = ((v as f64 - mean[ch]) as f32) * inv_std[ch];
            *o = gd[ch] * *xh + bd[ch];
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let train = stats.is_some();
        let id = self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            Tensor::from_parts(s, out),
            rg,
        );
        Ok((id, stats))
    }

    /// Mean softmax cross-entropy of `N×K` logits against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let s = self.value(logits).shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "cross-entropy of logits {s:?} with {} labels",
                labels.len()
            )));
        }
        let k = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index(format!("label {bad} out of range for {k} classes")));
        }
        let (losses, probs) = softmax_ce_rows(self.value(logits).data(), k, labels);
        let mean = losses.iter().sum::<f64>() / labels.len() as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            Tensor::scalar(mean as f32),
            rg,
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).sum() as f32;
        let rg = self.rg(a);
        self.push(Op::Sum(a), Tensor::scalar(total), rg)
    }

    /// Reverse-mode sweep from a scalar root. Gradients are kept for leaves only.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Index(format!("node {} of {}", root.0, self.nodes.len())));
        }
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..=root.0).map(|_| None).collect();
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|d| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), d))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], id: NodeId, g: Vec<f32>) {
        match &mut grads[id.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g, (n, 1), bv.data(), (1, n), 0.0, &mut ga);
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(k, m, n, av.data(), (1, k), g, (n, 1), 0.0, &mut gb);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Conv2d {
                x,
                k,
                geom,
                batch,
                filters,
            } => {
                let (rows, ncols) = (geom.col_rows(), geom.col_cols());
                let img = geom.c * geom.h * geom.w;
                let xd = self.value(*x).data();
                let kd = self.value(*k).data();
                let mut cols = vec![0.0; rows * ncols];
                let mut gk = self.rg(*k).then(|| vec![0.0; filters * rows]);
                let mut gx = self.rg(*x).then(|| vec![0.0; batch * img]);
                for i in 0..*batch {
                    let gi = &g[i * filters * ncols..(i + 1) * filters * ncols];
                    if let Some(gk) = gk.as_mut() {
                        kernels::im2col(&xd[i * img..(i + 1) * img], geom, &mut cols);
                        kernels::gemm(*filters, ncols, rows, gi, (ncols, 1), &cols, (1, ncols), 1.0, gk);
                    }
                    if let Some(gx) = gx.as_mut() {
                        kernels::gemm(rows, *filters, ncols, kd, (1, rows), gi, (ncols, 1), 0.0, &mut cols);
                        kernels::col2im(&cols, geom, &mut gx[i * img..(i + 1) * img]);
                    }
                }
                if let Some(gk) = gk {
                    self.accumulate(grads, *k, gk);
                }
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::AddBias(x, b) => {
                if self.rg(*x) {
                    self.accumulate(grads, *x, g.to_vec());
                }
                if self.rg(*b) {
                    let s = self.value(*x).shape();
                    let channels = s[1];
                    let inner: usize = s[2..].iter().product();
                    let mut gb = vec![0.0f32; channels];
                    for (i, &v) in g.iter().enumerate() {
                        gb[(i / inner) % channels] += v;
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                for p in [*a, *b] {
                    if self.rg(p) {
                        self.accumulate(grads, p, g.to_vec());
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let ga = zip_map(g, self.value(*b).data(), |p, q| p * q);
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = zip_map(g, self.value(*a).data(), |p, q| p * q);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, c) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.iter().map(|v| v * c).collect());
                }
            }
            Op::Relu(a) => {
                if self.rg(*a) {
                    let ga = zip_map(g, self.value(*a).data(), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    self.accumulate(grads, *a, ga);
                }
            }
            Op::Reshape(a) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.to_vec());
                }
            }
            Op::MaxPool { x, argmax } => {
                if self.rg(*x) {
                    let mut gx = vec![0.0; self.value(*x).len()];
                    for (&src, &gv) in argmax.iter().zip(g) {
                        gx[src as usize] += gv;
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::GlobalAvgPool(x) => {
                if self.rg(*x) {
                    let s = self.value(*x).shape();
                    let hw = s[2] * s[3];
                    let scale = 1.0 / hw as f32;
                    let gx = (0..self.value(*x).len()).map(|i| g[i / hw] * scale).collect();
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let s = self.value(*x).shape();
                let (n, c) = (s[0], s[1]);
                let inner: usize = s[2..].iter().product();
                let count = (n * inner) as f64;
                let mut sum_g = vec![0.0f64; c];
                let mut sum_gx = vec![0.0f64; c];
                for (i, (&gv, &xh)) in g.iter().zip(xhat).enumerate() {
                    let ch = (i / inner) % c;
                    sum_g[ch] += gv as f64;
                    sum_gx[ch] += (gv * xh) as f64;
                }
                let gd = self.value(*gamma).data();
                if self.rg(*x) {
                    let gx = g
                        .iter()
                        .zip(xhat)
                        .enumerate()
                        .map(|(i, (&gv, &xh))| {
                            let ch = (i / inner) % c;
                            let scale = gd[ch] * inv_std[ch];
                            if *train {
                                let centered = gv as f64
                                    - sum_g[ch] / count
                                    - xh as f64 * sum_gx[ch] / count;
                                (scale as f64 * centered) as f32
                            } else {
                                scale * gv
                            }
                        })
                        .collect();
                    self.accumulate(grads, *x, gx);
                }
                if self.rg(*gamma) {
                    self.accumulate(grads, *gamma, sum_gx.iter().map(|&v| v as f32).collect());
                }
                if self.rg(*beta) {
                    self.accumulate(grads, *beta, sum_g.iter().map(|&v| v as f32).collect());
                }
            }
            Op::SoftmaxCe {
                logits,
                probs,
                labels,
            } => {
                if self.rg(*logits) {
                    let k = self.value(*logits).shape()[1];
                    let scale = g[0] / labels.len() as f32;
                    let mut gl: Vec<f32> = probs.iter().map(|p| p * scale).collect();
                    for (i, &l) in labels.iter().enumerate() {
                        gl[i * k + l] -= scale;
                    }
                    self.accumulate(grads, *logits, gl);
                }
            }
            Op::Sum(a) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, vec![g[0]; self.value(*a).len()]);
                }
            }
        }
    }
}

fn zip_map(a: &[f32], b: &[f32], f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
    a.iter().zip(b).map(|(&p, &q)| f(p, q)).collect()
}

/// Per-row cross-entropy (in `f64`) and softmax probabilities, max-stabilized.
pub(crate) fn softmax_ce_rows(logits: &[f32], k: usize, labels: &[usize]) -> (Vec<f64>, Vec<f32>) {
    let mut probs = vec![0.0f32; logits.len()];
    let mut losses = Vec::with_capacity(labels.len());
    for (i, (row, &label)) in logits.chunks_exact(k).zip(labels).enumerate() {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let denom: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let log_denom = denom.ln();
        for (j, &v) in row.iter().enumerate() {
            probs[i * k + j] = ((v as f64 - max).exp() / denom) as f32;
        }
        losses.push(log_denom - (row[label] as f64 - max));
    }
    (losses, probs)
}
