//! Untargeted L∞ attacks on `[0,1]` inputs: FGSM, BIM, PGD and a simplified
//! sign-gradient APGD with momentum and checkpoint step halving.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::seed;
use crate::sparsity::MaskSet;
use crate::tensor::graph::softmax_ce_rows;
use crate::tensor::{Graph, Tensor};

use super::metrics::EVAL_BATCH;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Bim,
    Pgd,
    Apgd,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Bim => "bim",
            AttackKind::Pgd => "pgd",
            AttackKind::Apgd => "apgd",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub epsilon: f32,
    pub alpha: f32,
    pub steps: usize,
    /// PGD only.
    #[serde(default)]
    pub random_start: bool,
    /// APGD weight on the new gradient step.
    #[serde(default = "default_rho")]
    pub rho: f32,
    #[serde(default)]
    pub seed: u64,
}

fn default_rho() -> f32 {
    0.75
}

impl AttackSpec {
    /// ε = 0.1, α = ε/4, 10 steps, random start for PGD.
    pub fn default_for(kind: AttackKind) -> Self {
        let epsilon = 0.1;
        AttackSpec {
            kind,
            epsilon,
            alpha: epsilon / 4.0,
            steps: if kind == AttackKind::Fgsm { 1 } else { 10 },
            random_start: kind == AttackKind::Pgd,
            rho: default_rho(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("attack epsilon {} must be > 0", self.epsilon)));
        }
        self.check_runtime()
    }

    /// Checks run by the attacks themselves; these tolerate ε = 0.
    fn check_runtime(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("attack epsilon {} must be >= 0", self.epsilon)));
        }
        if self.steps == 0 {
            return Err(Error::Config("attack steps must be >= 1".into()));
        }
        if self.kind != AttackKind::Fgsm && !(self.alpha > 0.0) {
            return Err(Error::Config(format!("{} needs alpha > 0", self.kind.name())));
        }
        if self.kind == AttackKind::Apgd {
            if self.steps < 5 {
                return Err(Error::Config("apgd needs steps >= 5".into()));
            }
            if !(0.0..=1.0).contains(&self.rho) {
                return Err(Error::Config(format!("apgd rho {} outside [0, 1]", self.rho)));
            }
        }
        Ok(())
    }

    /// Parameter label used in reports, e.g. `pgd:eps=0.1`.
    pub fn label(&self) -> String {
        format!("{}:eps={}", self.kind.name(), self.epsilon)
    }
}

/// Something differentiable in the input: per-row losses and the gradient
/// of their mean with respect to `x`.
pub trait Objective {
    fn loss_and_grad(&mut self, x: &Tensor) -> Result<(Vec<f64>, Tensor)>;
}

/// Cross-entropy of an eval-mode model against fixed labels.
pub struct ModelObjective<'a> {
    pub model: &'a Model,
    pub masks: Option<&'a MaskSet>,
    pub labels: &'a [usize],
}

impl Objective for ModelObjective<'_> {
    fn loss_and_grad(&mut self, x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let mut g = Graph::new();
        let xin = g.input(x.clone(), true);
        let pass = self.model.forward_graph(&mut g, self.masks, xin, Mode::Eval, false)?;
        let loss = g.softmax_cross_entropy(pass.logits, self.labels)?;
        let logits = g.value(pass.logits);
        let (losses, _) = softmax_ce_rows(logits.data(), logits.shape()[1], self.labels);
        let mut grads = g.backward(loss)?;
        let grad = grads
            .take(xin)
            .ok_or_else(|| Error::Contract("input gradient missing".into()))?;
        Ok((losses, grad))
    }
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clips to the ε-ball around `x0`, then to `[0,1]`.
fn project(v: f32, x0: f32, eps: f32) -> f32 {
    v.clamp(x0 - eps, x0 + eps).clamp(0.0, 1.0)
}

pub fn fgsm_with(obj: &mut impl Objective, x: &Tensor, spec: &AttackSpec) -> Result<Tensor> {
    spec.check_runtime()?;
    let (_, g) = obj.loss_and_grad(x)?;
    let eps = spec.epsilon;
    let out = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&xi, &gi)| (xi + eps * sign(gi)).clamp(0.0, 1.0))
        .collect();
    Tensor::from_raw(x.shape(), out)
}

/// BIM, or PGD when `spec.random_start` is set.
pub fn iterative_with(obj: &mut impl Objective, x0: &Tensor, spec: &AttackSpec) -> Result<Tensor> {
    spec.check_runtime()?;
    let eps = spec.epsilon;
    let mut x = x0.clone();
    if spec.random_start {
        let mut rng = seed::rng(&[spec.seed, seed::hash_str("pgd_start")]);
        for (v, &o) in x.data_mut().iter_mut().zip(x0.data()) {
            let u: f32 = if eps > 0.0 { rng.random_range(-eps..eps) } else { 0.0 };
            *v = (o + u).clamp(0.0, 1.0);
        }
    }
    for _ in 0..spec.steps {
        let (_, g) = obj.loss_and_grad(&x)?;
        for ((v, &gi), &o) in x.data_mut().iter_mut().zip(g.data()).zip(x0.data()) {
            *v = project(*v + spec.alpha * sign(gi), o, eps);
        }
    }
    Ok(x)
}

/// Checkpoint iterations `ceil(p_j · steps)` with `p₀ = 0`, `p₁ = 0.22`,
/// `p_{j+1} = p_j + max(p_j − p_{j−1} − 0.03, 0.06)`.
pub fn apgd_checkpoints(steps: usize) -> Vec<usize> {
    let mut p = vec![0.0f64, 0.22];
    loop {
        let j = p.len() - 1;
        let next = p[j] + (p[j] - p[j - 1] - 0.03).max(0.06);
        if next > 1.0 {
            break;
        }
        p.push(next);
    }
    let mut w: Vec<usize> = p.iter().map(|&pj| (pj * steps as f64 - 1e-9).ceil() as usize).collect();
    w.dedup();
    w
}

pub fn apgd_with(obj: &mut impl Objective, x0: &Tensor, spec: &AttackSpec) -> Result<Tensor> {
    spec.check_runtime()?;
    let eps = spec.epsilon;
    let rho = spec.rho;
    let rows = x0.shape()[0];
    let d = x0.len() / rows;
    let checkpoints = apgd_checkpoints(spec.steps);

    let (l0, g0) = obj.loss_and_grad(x0)?;
    let mut best = x0.clone();
    let mut best_loss = l0.clone();
    let mut best_grad = g0.clone();
    let mut eta = vec![2.0 * eps; rows];
    let mut prev = x0.clone();
    let mut prev_loss = l0;
    let mut x = x0.clone();
    for (i, (v, &gi)) in x.data_mut().iter_mut().zip(g0.data()).enumerate() {
        let o = x0.data()[i];
        *v = project(o + eta[i / d] * sign(gi), o, eps);
    }
    let mut improved = vec![0usize; rows];
    let mut last_checkpoint = 0usize;
    let mut next_cp = 1;

    for k in 1..=spec.steps {
        let (loss, mut grad) = obj.loss_and_grad(&x)?;
        for r in 0..rows {
            if loss[r] > prev_loss[r] {
                improved[r] += 1;
            }
            if loss[r] > best_loss[r] {
                best_loss[r] = loss[r];
                best.data_mut()[r * d..(r + 1) * d].copy_from_slice(&x.data()[r * d..(r + 1) * d]);
                best_grad.data_mut()[r * d..(r + 1) * d].copy_from_slice(&grad.data()[r * d..(r + 1) * d]);
            }
        }
        prev_loss = loss;
        if k == spec.steps {
            break;
        }
        let mut cur_prev = prev.clone();
        if next_cp < checkpoints.len() && k == checkpoints[next_cp] {
            let interval = (k - last_checkpoint) as f64;
            for r in 0..rows {
                if (improved[r] as f64) < 0.75 * interval {
                    eta[r] /= 2.0;
                    let span = r * d..(r + 1) * d;
                    x.data_mut()[span.clone()].copy_from_slice(&best.data()[span.clone()]);
                    cur_prev.data_mut()[span.clone()].copy_from_slice(&best.data()[span.clone()]);
                    grad.data_mut()[span.clone()].copy_from_slice(&best_grad.data()[span.clone()]);
                    prev_loss[r] = best_loss[r];
                }
                improved[r] = 0;
            }
            last_checkpoint = k;
            next_cp += 1;
        }
        let mut next = x.clone();
        for (i, nv) in next.data_mut().iter_mut().enumerate() {
            let (xi, pi, o) = (x.data()[i], cur_prev.data()[i], x0.data()[i]);
            let z = project(xi + eta[i / d] * sign(grad.data()[i]), o, eps);
            *nv = project(xi + rho * (z - xi) + (1.0 - rho) * (xi - pi), o, eps);
        }
        prev = x;
        x = next;
    }
    Ok(best)
}

/// Runs `spec` against an arbitrary objective.
pub fn attack_with(obj: &mut impl Objective, x: &Tensor, spec: &AttackSpec) -> Result<Tensor> {
    match spec.kind {
        AttackKind::Fgsm => fgsm_with(obj, x, spec),
        AttackKind::Bim => iterative_with(obj, x, &AttackSpec { random_start: false, ..spec.clone() }),
        AttackKind::Pgd => iterative_with(obj, x, spec),
        AttackKind::Apgd => apgd_with(obj, x, spec),
    }
}

fn objective<'a>(model: &'a Model, masks: Option<&'a MaskSet>, y: &'a [usize]) -> ModelObjective<'a> {
    ModelObjective {
        model,
        masks,
        labels: y,
    }
}

pub fn fgsm(model: &Model, masks: Option<&MaskSet>, x: &Tensor, y: &[usize], spec: &AttackSpec) -> Result<Tensor> {
    fgsm_with(&mut objective(model, masks, y), x, spec)
}

pub fn bim(model: &Model, masks: Option<&MaskSet>, x: &Tensor, y: &[usize], spec: &AttackSpec) -> Result<Tensor> {
    let spec = AttackSpec {
        random_start: false,
        ..spec.clone()
    };
    iterative_with(&mut objective(model, masks, y), x, &spec)
}

pub fn pgd(model: &Model, masks: Option<&MaskSet>, x: &Tensor, y: &[usize], spec: &AttackSpec) -> Result<Tensor> {
    iterative_with(&mut objective(model, masks, y), x, spec)
}

pub fn apgd(model: &Model, masks: Option<&MaskSet>, x: &Tensor, y: &[usize], spec: &AttackSpec) -> Result<Tensor> {
    apgd_with(&mut objective(model, masks, y), x, spec)
}

pub fn attack(model: &Model, masks: Option<&MaskSet>, x: &Tensor, y: &[usize], spec: &AttackSpec) -> Result<Tensor> {
    attack_with(&mut objective(model, masks, y), x, spec)
}

/// Fraction of initially correct inputs that the attack flips; 0 when none
/// are correct.
pub fn success_rate(clean_pred: &[usize], adv_pred: &[usize], labels: &[usize]) -> f64 {
    let mut correct = 0usize;
    let mut flipped = 0usize;
    for ((&c, &a), &y) in clean_pred.iter().zip(adv_pred).zip(labels) {
        if c == y {
            correct += 1;
            if a != y {
                flipped += 1;
            }
        }
    }
    if correct == 0 {
        0.0
    } else {
        flipped as f64 / correct as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub accuracy: f64,
    pub success_rate: f64,
}

/// Attacks every example of `dataset` in batches; PGD random starts are
/// seeded per batch.
pub fn attack_dataset(model: &Model, masks: Option<&MaskSet>, dataset: &Dataset, spec: &AttackSpec) -> Result<AttackOutcome> {
    spec.validate()?;
    let n = dataset.len();
    let mut clean_pred = Vec::with_capacity(n);
    let mut adv_pred = Vec::with_capacity(n);
    let idx: Vec<usize> = (0..n).collect();
    for (b, chunk) in idx.chunks(EVAL_BATCH).enumerate() {
        let (x, y) = dataset.batch(chunk)?;
        let batch_spec = AttackSpec {
            seed: seed::mix(&[spec.seed, b as u64]),
            ..spec.clone()
        };
        let adv = attack(model, masks, &x, &y, &batch_spec)?;
        clean_pred.extend(model.forward(masks, &x, Mode::Eval)?.argmax_rows()?);
        adv_pred.extend(model.forward(masks, &adv, Mode::Eval)?.argmax_rows()?);
    }
    let labels = dataset.labels();
    let correct = adv_pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(AttackOutcome {
        accuracy: correct as f64 / n as f64,
        success_rate: success_rate(&clean_pred, &adv_pred, labels),
    })
}
