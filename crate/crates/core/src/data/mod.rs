//! Labeled image datasets: IDX and CIFAR binary readers, a synthetic blob
//! generator, and seeded subsampling.

mod cifar;
mod idx;
mod synth;

pub use cifar::{read_cifar_binary, write_cifar_binary, CIFAR100_RECORD, CIFAR10_RECORD};
pub use idx::{read_idx, read_mnist_dir, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use synth::synth_blobs;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Images in `[0,1]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    class_count: usize,
    name: String,
}

impl Dataset {
    /// Validates `N×C×H×W` images in `[0,1]` and labels in `[0, class_count)`.
    pub fn new(images: Tensor, labels: Vec<usize>, class_count: usize, name: impl Into<String>) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Dimension(format!(
                "images must be N×C×H×W, got {:?}",
                images.shape()
            )));
        }
        if labels.is_empty() || images.shape()[0] != labels.len() {
            return Err(Error::Contract(format!(
                "{} images with {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Index(format!("label {bad} with {class_count} classes")));
        }
        if let Some(i) = images.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract(format!(
                "pixel {} at flat index {i} outside [0,1]",
                images.data()[i]
            )));
        }
        Ok(Dataset {
            images,
            labels,
            class_count,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `[C, H, W]` of one image.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Gathers a batch of images and labels by index.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.images.select_rows(indices)?;
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    /// Same labels with replacement images (e.g. corrupted copies).
    pub fn with_images(&self, images: Tensor, name: impl Into<String>) -> Result<Self> {
        if images.shape() != self.images.shape() {
            return Err(Error::Dimension(format!(
                "replacement images {:?} for {:?}",
                images.shape(),
                self.images.shape()
            )));
        }
        Dataset::new(images, self.labels.clone(), self.class_count, name)
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let (images, labels) = self.batch(indices)?;
        Dataset::new(images, labels, self.class_count, self.name.clone())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.class_count];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// `n` examples drawn uniformly without replacement, kept in dataset order.
/// Subsamples drawn with different seeds may overlap.
pub fn subsample(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    let total = dataset.len();
    if n == 0 || n > total {
        return Err(Error::Contract(format!("subsample of {n} from {total} examples")));
    }
    let mut rng = seed::rng(&[seed, seed::hash_str("subsample")]);
    let mut idx: Vec<usize> = (0..total).collect();
    for i in 0..n {
        let j = rng.random_range(i..total);
        idx.swap(i, j);
    }
    let mut chosen = idx[..n].to_vec();
    chosen.sort_unstable();
    dataset.select(&chosen)
}
