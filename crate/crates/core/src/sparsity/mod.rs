//! Static random masks, post-training magnitude pruning, and mask application.
//!
//! Every weight tensor receives the same keep fraction, so the number of
//! removed weights is proportional to the tensor size. Counts are exact:
//! a tensor of `S` entries keeps `round(keep_fraction · S)` of them.

mod connectivity;

pub use connectivity::{connectivity_report, ConnectivityReport, LayerConnectivity};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::seed;
use crate::tensor::Tensor;

/// When a mask was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    AtInit,
    PostTrain,
}

/// One binary mask per maskable weight tensor, in model weight order.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    names: Vec<String>,
    masks: Vec<Tensor>,
    keep_fraction: f64,
    seed: u64,
    schedule: Schedule,
}

/// Number of entries kept out of `size` at `keep_fraction`.
pub fn kept_count(size: usize, keep_fraction: f64) -> usize {
    ((keep_fraction * size as f64).round() as usize).min(size)
}

fn check_fraction(keep_fraction: f64) -> Result<()> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "keep fraction {keep_fraction} outside (0, 1]"
        )));
    }
    Ok(())
}

impl MaskSet {
    /// Assembles a mask set, checking that every entry is 0 or 1.
    pub fn new(
        names: Vec<String>,
        masks: Vec<Tensor>,
        keep_fraction: f64,
        seed: u64,
        schedule: Schedule,
    ) -> Result<Self> {
        if names.len() != masks.len() {
            return Err(Error::Contract(format!(
                "{} names for {} masks",
                names.len(),
                masks.len()
            )));
        }
        for (n, m) in names.iter().zip(&masks) {
            if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Contract(format!("mask {n} has non-binary entries")));
            }
        }
        Ok(MaskSet {
            names,
            masks,
            keep_fraction,
            seed,
            schedule,
        })
    }

    /// All-ones masks for `model`.
    pub fn dense(model: &Model) -> Self {
        let (names, masks) = model
            .weight_indices()
            .into_iter()
            .map(|i| {
                let p = &model.param_specs()[i];
                (p.name.clone(), Tensor::ones(&p.shape))
            })
            .unzip();
        MaskSet {
            names,
            masks,
            keep_fraction: 1.0,
            seed: 0,
            schedule: Schedule::AtInit,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn masks(&self) -> &[Tensor] {
        &self.masks
    }

    pub fn masks_mut(&mut self) -> &mut [Tensor] {
        &mut self.masks
    }

    pub fn keep_fraction(&self) -> f64 {
        self.keep_fraction
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.masks[i])
    }

    /// Total kept entries across all tensors.
    pub fn kept(&self) -> usize {
        self.masks.iter().map(|m| m.count_nonzero()).sum()
    }

    pub fn total(&self) -> usize {
        self.masks.iter().map(|m| m.len()).sum()
    }

    /// Errors unless names and shapes line up with the model's weight tensors.
    pub fn check_matches(&self, model: &Model) -> Result<()> {
        let idx = model.weight_indices();
        if idx.len() != self.masks.len() {
            return Err(Error::Contract(format!(
                "{} masks for {} weight tensors",
                self.masks.len(),
                idx.len()
            )));
        }
        for ((i, name), mask) in idx.into_iter().zip(&self.names).zip(&self.masks) {
            let p = &model.param_specs()[i];
            if &p.name != name || p.shape != mask.shape() {
                return Err(Error::Contract(format!(
                    "mask {name} {:?} does not match weight {} {:?}",
                    mask.shape(),
                    p.name,
                    p.shape
                )));
            }
        }
        Ok(())
    }
}

/// Random static masks: per tensor, `round(keep·S)` positions chosen
/// uniformly without replacement by a partial Fisher–Yates shuffle seeded
/// from `(seed, tensor name)`.
pub fn generate_static_masks(model: &Model, keep_fraction: f64, seed: u64) -> Result<MaskSet> {
    check_fraction(keep_fraction)?;
    let mut names = Vec::new();
    let mut masks = Vec::new();
    for i in model.weight_indices() {
        let p = &model.param_specs()[i];
        let size: usize = p.shape.iter().product();
        let keep = kept_count(size, keep_fraction);
        let mut rng = seed::rng(&[seed, seed::hash_str(&p.name)]);
        let mut order: Vec<u32> = (0..size as u32).collect();
        for j in 0..keep {
            let k = rng.random_range(j..size);
            order.swap(j, k);
        }
        let mut data = vec![0.0f32; size];
        for &idx in &order[..keep] {
            data[idx as usize] = 1.0;
        }
        names.push(p.name.clone());
        masks.push(Tensor::from_parts(p.shape.clone(), data));
    }
    Ok(MaskSet {
        names,
        masks,
        keep_fraction,
        seed,
        schedule: Schedule::AtInit,
    })
}

/// Keeps the `round(keep·S)` largest-magnitude entries of each weight tensor;
/// equal magnitudes favour the lower flat index.
pub fn magnitude_prune(model: &Model, keep_fraction: f64) -> Result<MaskSet> {
    check_fraction(keep_fraction)?;
    let mut names = Vec::new();
    let mut masks = Vec::new();
    for i in model.weight_indices() {
        let p = &model.param_specs()[i];
        let w = model.params()[i].data();
        let keep = kept_count(w.len(), keep_fraction);
        let mut order: Vec<u32> = (0..w.len() as u32).collect();
        order.sort_by(|&a, &b| {
            w[b as usize]
                .abs()
                .total_cmp(&w[a as usize].abs())
                .then(a.cmp(&b))
        });
        let mut data = vec![0.0f32; w.len()];
        for &idx in &order[..keep] {
            data[idx as usize] = 1.0;
        }
        names.push(p.name.clone());
        masks.push(Tensor::from_parts(p.shape.clone(), data));
    }
    Ok(MaskSet {
        names,
        masks,
        keep_fraction,
        seed: 0,
        schedule: Schedule::PostTrain,
    })
}

/// Copy of `model` with masked weights set to zero.
pub fn apply_masks(model: &Model, masks: &MaskSet) -> Result<Model> {
    let mut out = model.clone();
    apply_masks_in_place(&mut out, masks)?;
    Ok(out)
}

pub fn apply_masks_in_place(model: &mut Model, masks: &MaskSet) -> Result<()> {
    masks.check_matches(model)?;
    for (slot, i) in model.weight_indices().into_iter().enumerate() {
        let mask = masks.masks[slot].data();
        for (w, &m) in model.params_mut()[i].data_mut().iter_mut().zip(mask) {
            if m == 0.0 {
                *w = 0.0;
            }
        }
    }
    Ok(())
}
