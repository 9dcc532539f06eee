//! Masked SGD with momentum, fixed or cosine-annealed learning rate, and
//! epoch / loss-threshold stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{build_model, ArchSpec, Family, Mode, Model};
use crate::seed;
use crate::sparsity::{apply_masks_in_place, MaskSet};
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Fixed,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_schedule: LrSchedule,
    pub lr0: f64,
    pub eta_min: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    /// Stop once the epoch-mean training cross-entropy drops below this.
    pub loss_threshold: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Anneal the cosine schedule per minibatch instead of per epoch.
    pub anneal_per_batch: bool,
}

impl Default for TrainConfig {
    /// MLP protocol: fixed LR 0.01, momentum 0.9, 300 epochs or CE < 0.01.
    fn default() -> Self {
        TrainConfig {
            lr_schedule: LrSchedule::Fixed,
            lr0: 0.01,
            eta_min: 0.0,
            momentum: 0.9,
            max_epochs: 300,
            loss_threshold: 0.01,
            batch_size: 128,
            seed: 0,
            anneal_per_batch: false,
        }
    }
}

impl TrainConfig {
    /// Convolutional protocol: cosine annealing from 0.01, stop at loss < 0.1.
    pub fn cnn() -> Self {
        TrainConfig {
            lr_schedule: LrSchedule::Cosine,
            loss_threshold: 0.1,
            ..Self::default()
        }
    }

    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Mlp => Self::default(),
            Family::VggLike | Family::ResnetLike => Self::cnn(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 {} must be positive", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("max_epochs and batch_size must be >= 1".into()));
        }
        if self.eta_min < 0.0 || self.eta_min > self.lr0 {
            return Err(Error::Config(format!("eta_min {} outside [0, lr0]", self.eta_min)));
        }
        Ok(())
    }

    /// Learning rate at (fractional) epoch `t`.
    pub fn lr_at(&self, t: f64) -> Result<f64> {
        match self.lr_schedule {
            LrSchedule::Fixed => Ok(self.lr0),
            LrSchedule::Cosine => cosine_lr(t, self.max_epochs as f64, self.lr0, self.eta_min),
        }
    }
}

/// `eta_min + ½(lr0 − eta_min)(1 + cos(π t / T))`.
pub fn cosine_lr(t: f64, total: f64, lr0: f64, eta_min: f64) -> Result<f64> {
    if !(0.0..=total).contains(&t) {
        return Err(Error::Contract(format!("cosine schedule at t={t} outside [0, {total}]")));
    }
    Ok(eta_min + 0.5 * (lr0 - eta_min) * (1.0 + (std::f64::consts::PI * t / total).cos()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Epochs,
    LossThreshold,
    Divergence,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// Learning rate at the start of the epoch.
    pub lr: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    /// `epoch,loss,accuracy,lr` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,accuracy,lr\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.loss, e.accuracy, e.lr));
        }
        s
    }
}

/// Momentum buffers, one per model parameter.
pub struct Velocity(Vec<Tensor>);

impl Velocity {
    pub fn zeros(model: &Model) -> Self {
        Velocity(model.params().iter().map(|p| Tensor::zeros(p.shape())).collect())
    }

    pub fn buffers(&self) -> &[Tensor] {
        &self.0
    }
}

/// One SGD step: `v ← m·v + g`, `w ← w − lr·v`. Gradients of masked entries
/// are zeroed first and masked weights are forced to zero afterwards.
/// Non-finite gradients leave the model untouched and signal divergence.
pub fn sgd_step(
    model: &mut Model,
    masks: Option<&MaskSet>,
    grads: &[Tensor],
    velocity: &mut Velocity,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if grads.len() != model.params().len() || velocity.0.len() != grads.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} parameters",
            grads.len(),
            model.params().len()
        )));
    }
    for (g, p) in grads.iter().zip(model.params()) {
        if g.shape() != p.shape() {
            return Err(Error::Dimension(format!(
                "gradient {:?} for parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
    }
    let mut mask_of: Vec<Option<&Tensor>> = vec![None; grads.len()];
    if let Some(m) = masks {
        m.check_matches(model)?;
        for (slot, i) in model.weight_indices().into_iter().enumerate() {
            mask_of[i] = Some(&m.masks()[slot]);
        }
    }
    let (lr, momentum) = (lr as f32, momentum as f32);
    for (i, (p, g)) in model.params_mut().iter_mut().zip(grads).enumerate() {
        let v = velocity.0[i].data_mut();
        let w = p.data_mut();
        match mask_of[i] {
            Some(mask) => {
                for (((w, v), &g), &m) in w.iter_mut().zip(v.iter_mut()).zip(g.data()).zip(mask.data()) {
                    let g = if m == 0.0 { 0.0 } else { g };
                    *v = momentum * *v + g;
                    *w = if m == 0.0 { 0.0 } else { *w - lr * *v };
                }
            }
            None => {
                for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                    *v = momentum * *v + g;
                    *w -= lr * *v;
                }
            }
        }
    }
    Ok(())
}

/// Builds a model from `spec` (init seed derived from `config.seed`), applies
/// the masks, and trains it.
pub fn train(
    spec: &ArchSpec,
    masks: Option<&MaskSet>,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    let mut model = build_model(spec, init_seed(config.seed))?;
    let history = train_model(&mut model, masks, dataset, config, |_, _| {})?;
    Ok((model, history))
}

/// Seed used by [`train`] to initialize weights.
pub fn init_seed(train_seed: u64) -> u64 {
    seed::mix(&[train_seed, seed::hash_str("init")])
}

/// Trains an existing model in place. `on_epoch` runs after every epoch.
pub fn train_model(
    model: &mut Model,
    masks: Option<&MaskSet>,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&Model, &EpochRecord),
) -> Result<TrainHistory> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    if let Some(m) = masks {
        apply_masks_in_place(model, m)?;
    }
    let mut velocity = Velocity::zeros(model);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let n_batches = dataset.len().div_ceil(config.batch_size);
    let mut epochs = Vec::new();
    let start = Instant::now();

    for epoch in 0..config.max_epochs {
        let mut rng = seed::rng(&[config.seed, seed::hash_str("shuffle"), epoch as u64]);
        order.shuffle(&mut rng);
        let epoch_lr = config.lr_at(epoch as f64)?;
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);

        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let lr = if config.anneal_per_batch {
                config.lr_at(epoch as f64 + b as f64 / n_batches as f64)?
            } else {
                epoch_lr
            };
            let (x, y) = dataset.batch(idx)?;
            let mut g = Graph::new();
            let xin = g.input(x, false);
            let pass = model.forward_graph(&mut g, masks, xin, Mode::Train, true)?;
            let loss = g.softmax_cross_entropy(pass.logits, &y)?;
            let lv = g.value(loss).item() as f64;
            if !lv.is_finite() {
                return Ok(diverged(epochs));
            }
            loss_sum += lv * idx.len() as f64;
            correct += g
                .value(pass.logits)
                .argmax_rows()?
                .iter()
                .zip(&y)
                .filter(|(p, t)| p == t)
                .count();
            let mut grads = g.backward(loss)?;
            let grads: Vec<Tensor> = pass
                .params
                .iter()
                .zip(model.params())
                .map(|(&id, p)| grads.take(id).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            match sgd_step(model, masks, &grads, &mut velocity, lr, config.momentum) {
                Ok(()) => {}
                Err(Error::Divergence(_)) => return Ok(diverged(epochs)),
                Err(e) => return Err(e),
            }
            model.update_running_stats(&pass.batch_stats);
        }

        let record = EpochRecord {
            epoch,
            loss: loss_sum / dataset.len() as f64,
            accuracy: correct as f64 / dataset.len() as f64,
            lr: epoch_lr,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(model, &record);
        let below = record.loss < config.loss_threshold;
        epochs.push(record);
        if below {
            return Ok(TrainHistory {
                epochs,
                stop_reason: StopReason::LossThreshold,
            });
        }
    }
    Ok(TrainHistory {
        epochs,
        stop_reason: StopReason::Epochs,
    })
}

fn diverged(epochs: Vec<EpochRecord>) -> TrainHistory {
    TrainHistory {
        epochs,
        stop_reason: StopReason::Divergence,
    }
}
