//! Architecture specs, parameter counting, capacity-matched keep fractions,
//! and the masked forward pass.

pub(crate) mod arch;
pub mod checkpoint;

pub use arch::ParamSpec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::sparsity::MaskSet;
use crate::tensor::{BatchNormMode, BatchStats, Graph, NodeId, Tensor};
use arch::{Layer, Plan};

/// Running-statistic momentum for batchnorm layers.
pub const BN_MOMENTUM: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Mlp,
    #[serde(alias = "vgg-like")]
    VggLike,
    #[serde(alias = "resnet-like")]
    ResnetLike,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Mlp => "mlp",
            Family::VggLike => "vgg_like",
            Family::ResnetLike => "resnet_like",
        }
    }
}

/// Declarative architecture description.
///
/// `width` is the hidden size for MLPs and the first-layer channel count for
/// the convolutional families. `depth` is the number of hidden layers for
/// MLPs and the variant number (VGG 11/13/16/19, ResNet 18/34/50) otherwise.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub family: Family,
    /// `[C, H, W]`, or `[D]` for flat MLP inputs.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub width: usize,
    pub depth: usize,
    #[serde(default = "default_true")]
    pub use_bias: bool,
}

fn default_true() -> bool {
    true
}

impl ArchSpec {
    pub fn mlp(input_shape: &[usize], width: usize, depth: usize, num_classes: usize) -> Self {
        ArchSpec {
            family: Family::Mlp,
            input_shape: input_shape.to_vec(),
            num_classes,
            width,
            depth,
            use_bias: true,
        }
    }

    /// One-hidden-layer MLP of `width` units on `28×28` single-channel input.
    pub fn mnist_mlp(width: usize) -> Self {
        Self::mlp(&[1, 28, 28], width, 1, 10)
    }

    /// VGG-like spec; `depth` selects the variant (11, 13, 16 or 19).
    pub fn vgg_like(input_shape: &[usize], width: usize, depth: usize, num_classes: usize) -> Self {
        ArchSpec {
            family: Family::VggLike,
            input_shape: input_shape.to_vec(),
            num_classes,
            width,
            depth,
            use_bias: true,
        }
    }

    pub fn resnet_like(input_shape: &[usize], width: usize, depth: usize, num_classes: usize) -> Self {
        ArchSpec {
            family: Family::ResnetLike,
            input_shape: input_shape.to_vec(),
            num_classes,
            width,
            depth,
            use_bias: true,
        }
    }

    /// Same spec with a different width.
    pub fn with_width(&self, width: usize) -> Self {
        ArchSpec {
            width,
            ..self.clone()
        }
    }

    pub fn with_depth(&self, depth: usize) -> Self {
        ArchSpec {
            depth,
            ..self.clone()
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub(crate) fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.input_shape.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            s => Err(Error::Config(format!(
                "{} needs a [C, H, W] input shape, got {s:?}",
                self.family.name()
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_shape.is_empty() || self.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("input shape {:?}", self.input_shape)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("{} classes (need >= 2)", self.num_classes)));
        }
        if self.width == 0 {
            return Err(Error::Config("width must be positive".into()));
        }
        if self.family == Family::Mlp {
            if self.depth == 0 {
                return Err(Error::Config("mlp depth must be >= 1".into()));
            }
            if !matches!(self.input_shape.len(), 1 | 3) {
                return Err(Error::Config(format!("mlp input shape {:?}", self.input_shape)));
            }
        } else {
            self.chw()?;
        }
        Ok(())
    }

    /// Canonical JSON (fixed field order).
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ArchSpec serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Matmul or convolution kernel; the only maskable kind.
    Weight,
    Bias,
    BnGamma,
    BnBeta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running batchnorm statistics for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub name: String,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ArchSpec,
    seed: u64,
    plan: Plan,
    params: Vec<Tensor>,
    running: Vec<RunningStats>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.seed == other.seed
            && self.params == other.params
            && self.running == other.running
    }
}

/// Builds and initializes a model: Kaiming-uniform weights
/// (bound `sqrt(6/fan_in)`), zero biases, unit gamma, zero beta.
pub fn build_model(spec: &ArchSpec, seed: u64) -> Result<Model> {
    let plan = arch::plan(spec)?;
    let params = plan
        .params
        .iter()
        .map(|p| match p.kind {
            ParamKind::Weight => {
                let bound = (6.0 / p.fan_in as f64).sqrt() as f32;
                let mut rng = seed::rng(&[seed, seed::hash_str(&p.name)]);
                Tensor::from_fn(&p.shape, |_| rng.random_range(-bound..=bound))
            }
            ParamKind::BnGamma => Tensor::ones(&p.shape),
            ParamKind::Bias | ParamKind::BnBeta => Tensor::zeros(&p.shape),
        })
        .collect();
    let running = plan
        .stats
        .iter()
        .map(|(name, c)| RunningStats {
            name: name.clone(),
            mean: vec![0.0; *c],
            var: vec![1.0; *c],
        })
        .collect();
    Ok(Model {
        spec: spec.clone(),
        seed,
        plan,
        params,
        running,
    })
}

/// Parameter counts of an architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    /// Entries of matmul and convolution kernels.
    pub maskable_weights: usize,
    /// Biases and batchnorm parameters.
    pub unmasked_params: usize,
}

pub fn param_count(spec: &ArchSpec) -> Result<ParamCount> {
    let plan = arch::plan(spec)?;
    let mut count = ParamCount {
        maskable_weights: 0,
        unmasked_params: 0,
    };
    for p in &plan.params {
        let n: usize = p.shape.iter().product();
        if p.kind == ParamKind::Weight {
            count.maskable_weights += n;
        } else {
            count.unmasked_params += n;
        }
    }
    Ok(count)
}

/// Keep fraction that gives `scaled` the same number of nonzero weights as
/// the dense `base`: `maskable(base) / maskable(scaled)`.
pub fn keep_fraction_for_capacity(base: &ArchSpec, scaled: &ArchSpec) -> Result<f64> {
    if base.family != scaled.family
        || base.input_shape != scaled.input_shape
        || base.num_classes != scaled.num_classes
    {
        return Err(Error::Config(format!(
            "capacity matching needs the same family, input and classes: {} vs {}",
            base.to_json(),
            scaled.to_json()
        )));
    }
    let b = param_count(base)?.maskable_weights;
    let s = param_count(scaled)?.maskable_weights;
    if s < b {
        return Err(Error::Capacity(format!(
            "scaled network has {s} maskable weights, fewer than the base's {b}"
        )));
    }
    Ok(b as f64 / s as f64)
}

/// Node handles produced by [`Model::forward_graph`].
pub struct ForwardPass {
    pub logits: NodeId,
    /// Leaf node per parameter, in [`Model::param_specs`] order.
    pub params: Vec<NodeId>,
    /// Batch statistics per running-stat slot (training mode only).
    pub batch_stats: Vec<(usize, BatchStats)>,
}

impl Model {
    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.plan.params
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.running
    }

    /// Indices (into [`Model::params`]) of the maskable weight tensors.
    pub fn weight_indices(&self) -> Vec<usize> {
        self.plan
            .params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.kind == ParamKind::Weight)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.plan.params.iter().position(|p| p.name == name)
    }

    pub fn nonzero_weights(&self) -> usize {
        self.weight_indices()
            .into_iter()
            .map(|i| self.params[i].count_nonzero())
            .sum()
    }

    pub(crate) fn layers(&self) -> &[Layer] {
        &self.plan.layers
    }

    /// Replaces parameters and running statistics (checkpoint restore).
    pub(crate) fn load_state(&mut self, params: Vec<Tensor>, running: Vec<RunningStats>) -> Result<()> {
        if params.len() != self.params.len() || running.len() != self.running.len() {
            return Err(Error::Contract("parameter count mismatch".into()));
        }
        for (spec, t) in self.plan.params.iter().zip(&params) {
            if spec.shape != t.shape() {
                return Err(Error::Contract(format!(
                    "{}: expected shape {:?}, got {:?}",
                    spec.name,
                    spec.shape,
                    t.shape()
                )));
            }
        }
        self.params = params;
        self.running = running;
        Ok(())
    }

    /// Folds batch statistics into the running averages.
    pub fn update_running_stats(&mut self, batch_stats: &[(usize, BatchStats)]) {
        for (slot, stats) in batch_stats {
            let r = &mut self.running[*slot];
            for (m, &b) in r.mean.iter_mut().zip(&stats.mean) {
                *m = (1.0 - BN_MOMENTUM) * *m + BN_MOMENTUM * b;
            }
            for (v, &b) in r.var.iter_mut().zip(&stats.var) {
                *v = (1.0 - BN_MOMENTUM) * *v + BN_MOMENTUM * b;
            }
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        let ok = s.len() >= 2 && s[1..].iter().product::<usize>() == self.spec.input_dim();
        let ok = ok
            && (self.spec.family == Family::Mlp || s[1..] == self.spec.input_shape[..]);
        if !ok {
            return Err(Error::Dimension(format!(
                "input {s:?} does not match spec input {:?}",
                self.spec.input_shape
            )));
        }
        Ok(())
    }

    /// Records the forward pass into `graph`. Parameter leaves require
    /// gradients iff `param_grads`; masked weights enter as `w ⊙ mask`.
    pub fn forward_graph(
        &self,
        graph: &mut Graph,
        masks: Option<&MaskSet>,
        x: NodeId,
        mode: Mode,
        param_grads: bool,
    ) -> Result<ForwardPass> {
        self.check_input(graph.value(x))?;
        if let Some(m) = masks {
            m.check_matches(self)?;
        }
        let mut mask_of = vec![None; self.params.len()];
        if let Some(m) = masks {
            for (slot, idx) in self.weight_indices().into_iter().enumerate() {
                mask_of[idx] = Some(&m.masks()[slot]);
            }
        }
        let mut params = Vec::with_capacity(self.params.len());
        let mut effective = Vec::with_capacity(self.params.len());
        for (i, p) in self.params.iter().enumerate() {
            let leaf = if param_grads {
                graph.param(p.clone())
            } else {
                graph.constant(p.clone())
            };
            params.push(leaf);
            let eff = match mask_of[i] {
                Some(mask) => {
                    let m = graph.constant(mask.clone());
                    graph.mul(leaf, m)?
                }
                None => leaf,
            };
            effective.push(eff);
        }
        let mut ctx = Ctx {
            graph,
            effective: &effective,
            running: &self.running,
            mode,
            batch_stats: Vec::new(),
        };
        let logits = ctx.run(&self.plan.layers, x)?;
        let batch_stats = ctx.batch_stats;
        Ok(ForwardPass {
            logits,
            params,
            batch_stats,
        })
    }

    /// Logits `N×K` for a batch; masked weights contribute exactly zero.
    pub fn forward(&self, masks: Option<&MaskSet>, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut g = Graph::new();
        let xin = g.input(x.clone(), false);
        let pass = self.forward_graph(&mut g, masks, xin, mode, false)?;
        Ok(g.value(pass.logits).clone())
    }

    /// Eval-mode logits computed in chunks of `batch` rows.
    pub fn predict_logits(&self, masks: Option<&MaskSet>, x: &Tensor, batch: usize) -> Result<Tensor> {
        let n = x.shape()[0];
        let mut data = Vec::new();
        let mut k = 0;
        let mut start = 0;
        while start < n {
            let end = (start + batch.max(1)).min(n);
            let logits = self.forward(masks, &x.slice_rows(start, end)?, Mode::Eval)?;
            k = logits.shape()[1];
            data.extend_from_slice(logits.data());
            start = end;
        }
        Tensor::from_raw(&[n, k], data)
    }
}

struct Ctx<'a> {
    graph: &'a mut Graph,
    effective: &'a [NodeId],
    running: &'a [RunningStats],
    mode: Mode,
    batch_stats: Vec<(usize, BatchStats)>,
}

impl Ctx<'_> {
    fn run(&mut self, layers: &[Layer], mut x: NodeId) -> Result<NodeId> {
        for layer in layers {
            x = self.layer(layer, x)?;
        }
        Ok(x)
    }

    fn layer(&mut self, layer: &Layer, x: NodeId) -> Result<NodeId> {
        let g = &mut *self.graph;
        Ok(match layer {
            Layer::Linear { weight, bias } => {
                let y = g.matmul(x, self.effective[*weight])?;
                match bias {
                    Some(b) => g.add_bias(y, self.effective[*b])?,
                    None => y,
                }
            }
            Layer::Conv {
                weight,
                bias,
                stride,
                pad,
            } => {
                let y = g.conv2d(x, self.effective[*weight], *stride, *pad)?;
                match bias {
                    Some(b) => g.add_bias(y, self.effective[*b])?,
                    None => y,
                }
            }
            Layer::BatchNorm { gamma, beta, stats } => {
                let mode = match self.mode {
                    Mode::Train => BatchNormMode::Train,
                    Mode::Eval => BatchNormMode::Eval {
                        running_mean: &self.running[*stats].mean,
                        running_var: &self.running[*stats].var,
                    },
                };
                let (y, batch) = g.batchnorm(x, self.effective[*gamma], self.effective[*beta], mode)?;
                if let Some(b) = batch {
                    self.batch_stats.push((*stats, b));
                }
                y
            }
            Layer::Relu => g.relu(x),
            Layer::MaxPool => g.maxpool2x2(x)?,
            Layer::GlobalAvgPool => g.global_avgpool(x)?,
            Layer::Flatten => {
                if g.value(x).rank() == 2 {
                    x
                } else {
                    g.flatten(x)?
                }
            }
            Layer::Residual { body, shortcut } => {
                let main = self.run(body, x)?;
                let skip = self.run(shortcut, x)?;
                let sum = self.graph.add(main, skip)?;
                self.graph.relu(sum)
            }
        })
    }
}
