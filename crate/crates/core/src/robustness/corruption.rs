//! Algorithmic image corruptions at severities 1–5.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    GaussianBlur,
    Contrast,
    Brightness,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 7] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::GaussianBlur,
        CorruptionKind::Contrast,
        CorruptionKind::Brightness,
        CorruptionKind::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::GaussianBlur => "gaussian_blur",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Pixelate => "pixelate",
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            CorruptionKind::GaussianNoise | CorruptionKind::ShotNoise | CorruptionKind::ImpulseNoise
        )
    }

    /// Parameter for severities 1..=5.
    pub fn table(self) -> [f64; 5] {
        match self {
            CorruptionKind::GaussianNoise => [0.05, 0.1, 0.15, 0.2, 0.25],
            CorruptionKind::ShotNoise => [60.0, 25.0, 12.0, 5.0, 3.0],
            CorruptionKind::ImpulseNoise => [0.01, 0.03, 0.06, 0.1, 0.17],
            CorruptionKind::GaussianBlur => [0.5, 1.0, 1.5, 2.0, 2.5],
            CorruptionKind::Contrast => [0.75, 0.5, 0.4, 0.3, 0.15],
            CorruptionKind::Brightness => [0.1, 0.2, 0.3, 0.4, 0.5],
            CorruptionKind::Pixelate => [2.0, 3.0, 4.0, 5.0, 6.0],
        }
    }
}

/// Version tag of the severity tables, printed into reports.
pub const SEVERITY_TABLE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    /// Required for the noise kinds, ignored by the others.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Self {
        CorruptionSpec {
            kind,
            severity,
            seed: Some(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.severity) {
            return Err(Error::Config(format!(
                "{} severity {} outside [1, 5]",
                self.kind.name(),
                self.severity
            )));
        }
        if self.kind.is_stochastic() && self.seed.is_none() {
            return Err(Error::Config(format!("{} needs a seed", self.kind.name())));
        }
        Ok(())
    }

    pub fn parameter(&self) -> Result<f64> {
        self.validate()?;
        Ok(self.kind.table()[self.severity as usize - 1])
    }
}

/// Corrupts an `N×C×H×W` batch of `[0,1]` images at the tabled severity.
pub fn corrupt(images: &Tensor, spec: &CorruptionSpec) -> Result<Tensor> {
    let param = spec.parameter()?;
    let stream = spec
        .seed
        .map(|s| vec![s, seed::hash_str(spec.kind.name()), spec.severity as u64])
        .unwrap_or_default();
    corrupt_with_parameter(images, spec.kind, param, &stream)
}

/// Corrupts with an explicit parameter; `stream` seeds the noise kinds.
pub fn corrupt_with_parameter(images: &Tensor, kind: CorruptionKind, param: f64, stream: &[u64]) -> Result<Tensor> {
    if images.rank() != 4 {
        return Err(Error::Dimension(format!("corrupt expects N×C×H×W, got {:?}", images.shape())));
    }
    if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Contract("corrupt expects pixels in [0,1]".into()));
    }
    let s = images.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut rng = seed::rng(stream);
    let x = images.data();
    let out: Vec<f32> = match kind {
        CorruptionKind::GaussianNoise => {
            let dist = Normal::new(0.0, param).map_err(|e| Error::Config(e.to_string()))?;
            x.iter().map(|&v| v as f64 + dist.sample(&mut rng)).map(clip).collect()
        }
        CorruptionKind::ShotNoise => x
            .iter()
            .map(|&v| {
                let lambda = v as f64 * param;
                if lambda <= 0.0 {
                    0.0
                } else {
                    let k: f64 = Poisson::new(lambda).expect("positive rate").sample(&mut rng);
                    clip(k / param)
                }
            })
            .collect(),
        CorruptionKind::ImpulseNoise => x
            .iter()
            .map(|&v| {
                let hit = rng.random_bool(param);
                let salt = rng.random_bool(0.5);
                match (hit, salt) {
                    (false, _) => v,
                    (true, true) => 1.0,
                    (true, false) => 0.0,
                }
            })
            .collect(),
        CorruptionKind::GaussianBlur => {
            let mut out = x.to_vec();
            for plane in out.chunks_exact_mut(h * w) {
                blur_plane(plane, h, w, param);
            }
            out
        }
        CorruptionKind::Contrast => {
            let per = c * h * w;
            let mut out = Vec::with_capacity(x.len());
            for img in x.chunks_exact(per) {
                let mean = img.iter().map(|&v| v as f64).sum::<f64>() / per as f64;
                out.extend(img.iter().map(|&v| clip((v as f64 - mean) * param + mean)));
            }
            out
        }
        CorruptionKind::Brightness => x.iter().map(|&v| clip(v as f64 + param)).collect(),
        CorruptionKind::Pixelate => {
            let f = param.round() as usize;
            if f < 1 {
                return Err(Error::Config(format!("pixelate factor {param}")));
            }
            let mut out = x.to_vec();
            for plane in out.chunks_exact_mut(h * w) {
                pixelate_plane(plane, h, w, f);
            }
            out
        }
    };
    Tensor::new(&[n, c, h, w], out)
}

fn clip(v: f64) -> f32 {
    v.clamp(0.0, 1.0) as f32
}

/// Normalized Gaussian taps with radius `round(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).round() as i64;
    let taps: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable blur with edge replication.
fn blur_plane(plane: &mut [f32], h: usize, w: usize, sigma: f64) {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(t, &kv)| {
                    let xx = (x as i64 + t as i64 - r).clamp(0, w as i64 - 1) as usize;
                    kv * plane[y * w + xx] as f64
                })
                .sum();
        }
    }
    for y in 0..h {
        for x in 0..w {
            let v: f64 = k
                .iter()
                .enumerate()
                .map(|(t, &kv)| {
                    let yy = (y as i64 + t as i64 - r).clamp(0, h as i64 - 1) as usize;
                    kv * tmp[yy * w + x]
                })
                .sum();
            plane[y * w + x] = clip(v);
        }
    }
}

/// Box average over `f×f` blocks (partial blocks at the border), then
/// nearest-neighbor upsampling back to `h×w`.
fn pixelate_plane(plane: &mut [f32], h: usize, w: usize, f: usize) {
    for by in (0..h).step_by(f) {
        for bx in (0..w).step_by(f) {
            let (ey, ex) = ((by + f).min(h), (bx + f).min(w));
            let mut sum = 0.0f64;
            for y in by..ey {
                for x in bx..ex {
                    sum += plane[y * w + x] as f64;
                }
            }
            let avg = (sum / ((ey - by) * (ex - bx)) as f64) as f32;
            for y in by..ey {
                for x in bx..ex {
                    plane[y * w + x] = avg;
                }
            }
        }
    }
}
