use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Pixel noise standard deviation of the blob images.
pub const BLOB_NOISE: f64 = 0.1;

/// Single-channel images, each a Gaussian bump at a class-specific position
/// on a ring around the image center, with positional jitter, amplitude
/// variation, and additive pixel noise. Labels cycle `0, 1, …` so any prefix
/// is class-balanced.
pub fn synth_blobs(n_per_class: usize, classes: usize, image_side: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Config(format!("synth_blobs needs >= 2 classes, got {classes}")));
    }
    if n_per_class == 0 || image_side < 4 {
        return Err(Error::Config(format!(
            "synth_blobs with {n_per_class} per class on {image_side}px images"
        )));
    }
    let side = image_side as f64;
    let center = (side - 1.0) / 2.0;
    let radius = side * 0.3;
    let width = side / 8.0;
    let mut rng = seed::rng(&[seed, seed::hash_str("synth_blobs")]);
    let noise = Normal::new(0.0, BLOB_NOISE).expect("valid sigma");
    let n = n_per_class * classes;
    let mut pixels = Vec::with_capacity(n * image_side * image_side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let angle = 2.0 * PI * class as f64 / classes as f64;
        let cy = center + radius * angle.sin() + rng.random_range(-1.0..1.0);
        let cx = center + radius * angle.cos() + rng.random_range(-1.0..1.0);
        let amp = rng.random_range(0.7..1.0);
        for y in 0..image_side {
            for x in 0..image_side {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                let v = amp * (-d2 / (2.0 * width * width)).exp() + noise.sample(&mut rng);
                pixels.push(v.clamp(0.0, 1.0) as f32);
            }
        }
        labels.push(class);
    }
    let images = Tensor::from_parts(vec![n, 1, image_side, image_side], pixels);
    Dataset::new(images, labels, classes, format!("blobs{classes}x{image_side}"))
}
