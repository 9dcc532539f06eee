//! Multiplicative Gaussian weight noise: `z_i ~ N(μ, w_i²σ²)`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::seed;
use crate::sparsity::MaskSet;

use super::metrics::{accuracy_and_loss, accuracy_and_loss_of, dataset_logits};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub mu: f64,
    pub sigma: f64,
    #[serde(default = "default_draws")]
    pub n_draws: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_draws() -> usize {
    5
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Self {
        NoiseSpec {
            mu: 0.0,
            sigma,
            n_draws: default_draws(),
            seed,
        }
    }

    pub fn with_draws(mut self, n_draws: usize) -> Self {
        self.n_draws = n_draws;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma {} must be >= 0", self.sigma)));
        }
        if !self.mu.is_finite() {
            return Err(Error::Config(format!("noise mu {} must be finite", self.mu)));
        }
        if self.n_draws == 0 {
            return Err(Error::Config("n_draws must be >= 1".into()));
        }
        Ok(())
    }
}

/// Adds `μ + |w|·σ·n` with `n ~ N(0,1)` to every weight whose mask entry is
/// nonzero. The standard-normal stream depends only on `(seed, draw, slot)`.
pub fn perturb_slice(weights: &mut [f32], mask: Option<&[f32]>, mu: f64, sigma: f64, stream: &[u64]) {
    let mut rng = seed::rng(stream);
    for (i, w) in weights.iter_mut().enumerate() {
        let n: f64 = StandardNormal.sample(&mut rng);
        if mask.is_some_and(|m| m[i] == 0.0) {
            continue;
        }
        let z = mu + (*w as f64).abs() * sigma * n;
        *w = (*w as f64 + z) as f32;
    }
}

/// A perturbed copy of `model`; only maskable weights receive noise.
pub fn perturb_weights(model: &Model, masks: Option<&MaskSet>, noise: &NoiseSpec, draw_index: u64) -> Result<Model> {
    noise.validate()?;
    if let Some(m) = masks {
        m.check_matches(model)?;
    }
    let mut out = model.clone();
    if noise.sigma == 0.0 && noise.mu == 0.0 {
        return Ok(out);
    }
    for (slot, idx) in model.weight_indices().into_iter().enumerate() {
        let mask = masks.map(|m| m.masks()[slot].data());
        perturb_slice(
            out.params_mut()[idx].data_mut(),
            mask,
            noise.mu,
            noise.sigma,
            &[noise.seed, seed::hash_str("weight_noise"), draw_index, slot as u64],
        );
    }
    Ok(out)
}

/// Monte-Carlo mean and standard error (sample std / √n; 0 for a single draw).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaLoss {
    pub mean: f64,
    pub stderr: f64,
}

impl DeltaLoss {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let stderr = if samples.len() < 2 {
            0.0
        } else {
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        DeltaLoss { mean, stderr }
    }
}

/// δL for an arbitrary loss over a flat parameter vector.
pub fn delta_loss_with(params: &[f32], noise: &NoiseSpec, loss: impl Fn(&[f32]) -> f64) -> Result<DeltaLoss> {
    noise.validate()?;
    let clean = loss(params);
    let mut buf = params.to_vec();
    let samples: Vec<f64> = (0..noise.n_draws as u64)
        .map(|d| {
            buf.copy_from_slice(params);
            perturb_slice(&mut buf, None, noise.mu, noise.sigma, &[noise.seed, seed::hash_str("weight_noise"), d, 0]);
            loss(&buf) - clean
        })
        .collect();
    Ok(DeltaLoss::from_samples(&samples))
}

/// `E_z[L(w+z) − L(w)]` over `noise.n_draws` draws, with mean cross-entropy on `data`.
pub fn estimate_delta_loss(model: &Model, masks: Option<&MaskSet>, data: &Dataset, noise: &NoiseSpec) -> Result<DeltaLoss> {
    noise.validate()?;
    let (_, clean) = accuracy_and_loss(model, masks, data)?;
    let mut samples = Vec::with_capacity(noise.n_draws);
    for d in 0..noise.n_draws as u64 {
        let noisy = perturb_weights(model, masks, noise, d)?;
        let (_, l) = accuracy_and_loss(&noisy, masks, data)?;
        samples.push(l - clean);
    }
    Ok(DeltaLoss::from_samples(&samples))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub sigma: f64,
    /// Mean accuracy over the draws.
    pub accuracy: f64,
    pub delta_loss: DeltaLoss,
}

/// Accuracy and δL at each σ; `base` supplies μ, draw count and seed.
pub fn perturbation_curve(
    model: &Model,
    masks: Option<&MaskSet>,
    testset: &Dataset,
    sigmas: &[f64],
    base: &NoiseSpec,
) -> Result<Vec<CurvePoint>> {
    if sigmas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config(format!("sigmas {sigmas:?} must be sorted ascending")));
    }
    let (_, clean_loss) = accuracy_and_loss(model, masks, testset)?;
    sigmas
        .iter()
        .map(|&sigma| {
            let noise = NoiseSpec { sigma, ..base.clone() };
            noise.validate()?;
            let mut acc = 0.0;
            let mut samples = Vec::with_capacity(noise.n_draws);
            for d in 0..noise.n_draws as u64 {
                let noisy = perturb_weights(model, masks, &noise, d)?;
                let logits = dataset_logits(&noisy, masks, testset)?;
                let (a, l) = accuracy_and_loss_of(&logits, testset.labels());
                acc += a;
                samples.push(l - clean_loss);
            }
            Ok(CurvePoint {
                sigma,
                accuracy: acc / noise.n_draws as f64,
                delta_loss: DeltaLoss::from_samples(&samples),
            })
        })
        .collect()
}
