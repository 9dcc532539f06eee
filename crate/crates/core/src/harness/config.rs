use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{read_cifar_binary, read_idx, read_mnist_dir, subsample, synth_blobs, Dataset};
use crate::error::{Error, Result};
use crate::model::{keep_fraction_for_capacity, ArchSpec};
use crate::robustness::Probes;
use crate::seed;
use crate::sparsity::Schedule;
use crate::train::TrainConfig;

/// Environment variable that overrides the master seed.
pub const SEED_ENV: &str = "SPARSELAB_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleAxis {
    Width,
    Depth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Directory with the four standard MNIST IDX files.
    Mnist { dir: PathBuf },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Cifar {
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
        #[serde(default)]
        coarse: bool,
    },
    Blobs {
        n_per_class: usize,
        test_per_class: usize,
        classes: usize,
        side: usize,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DataSource,
    #[serde(default)]
    pub train_subsample: Option<usize>,
    #[serde(default)]
    pub test_subsample: Option<usize>,
}

impl DatasetSpec {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.source {
            DataSource::Mnist { dir } => fix(dir),
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    fix(p);
                }
            }
            DataSource::Cifar { train, test, .. } => train.iter_mut().chain(test.iter_mut()).for_each(fix),
            DataSource::Blobs { .. } => {}
        }
    }

    /// Loads `(train, test)`, subsampled with seeds derived from `master`.
    pub fn load(&self, master: u64) -> Result<(Dataset, Dataset)> {
        let (train, test) = match &self.source {
            DataSource::Mnist { dir } => read_mnist_dir(dir)?,
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let train = read_idx(train_images, train_labels)?;
                let test = read_idx(test_images, test_labels)?;
                let k = train.class_count().max(test.class_count());
                (
                    Dataset::new(train.images().clone(), train.labels().to_vec(), k, train.name())?,
                    Dataset::new(test.images().clone(), test.labels().to_vec(), k, test.name())?,
                )
            }
            DataSource::Cifar { train, test, coarse } => {
                (read_cifar_binary(train, *coarse)?, read_cifar_binary(test, *coarse)?)
            }
            DataSource::Blobs {
                n_per_class,
                test_per_class,
                classes,
                side,
                seed: s,
            } => (
                synth_blobs(*n_per_class, *classes, *side, *s)?,
                synth_blobs(*test_per_class, *classes, *side, seed::mix(&[*s, 1]))?,
            ),
        };
        let cut = |d: Dataset, n: Option<usize>, tag: &str| -> Result<Dataset> {
            match n {
                Some(n) if n < d.len() => subsample(&d, n, seed::mix(&[master, seed::hash_str(tag)])),
                Some(n) if n > d.len() => Err(Error::Config(format!(
                    "{tag} of {n} exceeds the {} available examples",
                    d.len()
                ))),
                _ => Ok(d),
            }
        };
        Ok((
            cut(train, self.train_subsample, "train_subsample")?,
            cut(test, self.test_subsample, "test_subsample")?,
        ))
    }
}

fn default_repeats() -> usize {
    5
}

fn default_schedule() -> Schedule {
    Schedule::AtInit
}

/// A capacity-matched sweep. Keep fractions are always derived from `base`
/// and the scaled specs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// The 100% network.
    pub base: ArchSpec,
    pub axis: ScaleAxis,
    /// Widths or depths, depending on `axis`.
    pub grid: Vec<usize>,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Defaults to the family's training protocol.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub probes: Probes,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub save_checkpoints: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Reads a config file, resolving relative paths against its directory
    /// and applying the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.resolve(base);
        if let Some(out) = &mut cfg.output_dir {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.clone().unwrap_or_else(|| TrainConfig::for_family(self.base.family))
    }

    pub fn scaled_spec(&self, point: usize) -> ArchSpec {
        match self.axis {
            ScaleAxis::Width => self.base.with_width(point),
            ScaleAxis::Depth => self.base.with_depth(point),
        }
    }

    pub fn keep_fraction(&self, point: usize) -> Result<f64> {
        keep_fraction_for_capacity(&self.base, &self.scaled_spec(point))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("grid must be nonempty".into()));
        }
        let mut seen = self.grid.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.grid.len() {
            return Err(Error::Config("grid has duplicate points".into()));
        }
        self.base.validate()?;
        for &p in &self.grid {
            self.scaled_spec(p).validate()?;
            self.keep_fraction(p)?;
        }
        self.train_config().validate()?;
        self.probes.validate()?;
        if self.save_checkpoints && self.output_dir.is_none() {
            return Err(Error::Config("save_checkpoints needs output_dir".into()));
        }
        Ok(())
    }
}
