//! Small trained models on synthetic blobs, shared by several test targets.

use sparselab::data::{synth_blobs, Dataset};
use sparselab::model::{ArchSpec, Model};
use sparselab::train::{train, TrainConfig};

pub const SIDE: usize = 12;
pub const CLASSES: usize = 4;

pub fn blobs_spec(width: usize) -> ArchSpec {
    ArchSpec::mlp(&[1, SIDE, SIDE], width, 1, CLASSES)
}

/// 100 training examples per class.
pub fn blobs_train(seed: u64) -> Dataset {
    synth_blobs(100, CLASSES, SIDE, seed).unwrap()
}

/// 250 held-out examples per class.
pub fn blobs_test(seed: u64) -> Dataset {
    synth_blobs(250, CLASSES, SIDE, seed ^ 0x5eed).unwrap()
}

/// Width-32 MLP trained for 30 epochs on [`blobs_train`].
pub fn trained_mlp(seed: u64) -> Model {
    let config = TrainConfig {
        max_epochs: 30,
        seed,
        ..TrainConfig::default()
    };
    train(&blobs_spec(32), None, &blobs_train(seed), &config).unwrap().0
}
