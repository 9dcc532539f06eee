//! CIFAR-10 / CIFAR-100 binary batches.
//!
//! CIFAR-10 records are `label | 3072 pixels`; CIFAR-100 records are
//! `coarse | fine | 3072 pixels`. Pixels are planar RGB, 32×32.

use std::path::{Path, PathBuf};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR10_RECORD: usize = 3073;
pub const CIFAR100_RECORD: usize = 3074;
const PIXELS: usize = 3 * 32 * 32;

/// Reads one or more batch files of the same variant, chosen from the file
/// size. `coarse` selects the 20 CIFAR-100 superclasses.
pub fn read_cifar_binary(paths: &[PathBuf], coarse: bool) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::Contract("no CIFAR files given".into()));
    }
    let mut record = None;
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let size = match (buf.len() % CIFAR10_RECORD == 0, buf.len() % CIFAR100_RECORD == 0) {
            _ if buf.is_empty() => return Err(Error::format(0, format!("{} is empty", path.display()))),
            (true, false) => CIFAR10_RECORD,
            (false, true) => CIFAR100_RECORD,
            (true, true) => {
                return Err(Error::format(0, format!("{}: ambiguous record size", path.display())))
            }
            (false, false) => {
                let whole = buf.len() / CIFAR10_RECORD * CIFAR10_RECORD;
                return Err(Error::format(
                    whole as u64,
                    format!(
                        "{}: {} bytes is not a multiple of {CIFAR10_RECORD} or {CIFAR100_RECORD}",
                        path.display(),
                        buf.len()
                    ),
                ));
            }
        };
        if *record.get_or_insert(size) != size {
            return Err(Error::format(0, format!("{} mixes CIFAR variants", path.display())));
        }
        if coarse && size == CIFAR10_RECORD {
            return Err(Error::Config("coarse labels requested for CIFAR-10 input".into()));
        }
        for rec in buf.chunks_exact(size) {
            let label = match size {
                CIFAR10_RECORD => rec[0],
                _ if coarse => rec[0],
                _ => rec[1],
            };
            labels.push(label as usize);
            pixels.extend(rec[size - PIXELS..].iter().map(|&p| p as f32 / 255.0));
        }
    }
    let n = labels.len();
    let (classes, name) = match (record, coarse) {
        (Some(CIFAR10_RECORD), _) => (10, "cifar10"),
        (_, true) => (20, "cifar100-coarse"),
        _ => (100, "cifar100"),
    };
    Dataset::new(Tensor::from_parts(vec![n, 3, 32, 32], pixels), labels, classes, name)
}

/// Writes a `3×32×32` dataset as CIFAR-10 records, or as CIFAR-100 records
/// when `coarse_labels` is given.
pub fn write_cifar_binary(dataset: &Dataset, path: &Path, coarse_labels: Option<&[usize]>) -> Result<()> {
    if dataset.image_shape() != [3, 32, 32] {
        return Err(Error::Contract(format!(
            "CIFAR records are 3×32×32, got {:?}",
            dataset.image_shape()
        )));
    }
    let mut out = Vec::new();
    for (i, img) in dataset.images().data().chunks_exact(PIXELS).enumerate() {
        if let Some(c) = coarse_labels {
            out.push(c[i] as u8);
        }
        out.push(dataset.labels()[i] as u8);
        out.extend(img.iter().map(|&p| (p * 255.0).round() as u8));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
