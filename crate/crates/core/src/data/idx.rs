//! IDX (MNIST) files: big-endian magic and dimensions, then `u8` payload.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(buf: &[u8], at: usize) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(at as u64, "truncated header"))
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
fn parse_images(buf: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(buf, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(0, format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = be_u32(buf, 4)? as usize;
    let rows = be_u32(buf, 8)? as usize;
    let cols = be_u32(buf, 12)? as usize;
    let need = n * rows * cols;
    let payload = &buf[16..];
    if payload.len() != need {
        return Err(Error::format(
            (16 + payload.len().min(need)) as u64,
            format!("image payload has {} bytes, header implies {need}", payload.len()),
        ));
    }
    Ok((n, rows, cols, payload))
}

fn parse_labels(buf: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(buf, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(0, format!("label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(buf, 4)? as usize;
    let payload = &buf[8..];
    if payload.len() != n {
        return Err(Error::format(
            (8 + payload.len().min(n)) as u64,
            format!("label payload has {} bytes, header implies {n}", payload.len()),
        ));
    }
    Ok(payload)
}

/// Reads an IDX image/label pair; pixels are scaled by 1/255. The class
/// count is one more than the largest label (at least 2).
pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let ib = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lb = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let (n, rows, cols, pixels) = parse_images(&ib)?;
    let labels = parse_labels(&lb)?;
    if labels.len() != n {
        return Err(Error::format(4, format!("{n} images but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::format(4, "empty IDX file"));
    }
    let images = Tensor::from_parts(
        vec![n, 1, rows, cols],
        pixels.iter().map(|&p| p as f32 / 255.0).collect(),
    );
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let name = images_path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(images, labels, classes, name)
}

/// Loads `(train, test)` from a directory holding the four standard MNIST files.
pub fn read_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let load = |img: &str, lab: &str, name: &str| -> Result<Dataset> {
        let d = read_idx(&dir.join(img), &dir.join(lab))?;
        let (images, labels) = (d.images().clone(), d.labels().to_vec());
        Dataset::new(images, labels, 10, name)
    };
    Ok((
        load("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "mnist-train")?,
        load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", "mnist-test")?,
    ))
}

/// Writes a single-channel dataset as an IDX pair (pixels rounded to `u8`).
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let s = dataset.image_shape();
    if s[0] != 1 {
        return Err(Error::Contract(format!("IDX images are single-channel, got {s:?}")));
    }
    let n = dataset.len() as u32;
    let mut ib = Vec::with_capacity(16 + dataset.images().len());
    for w in [IDX_IMAGES_MAGIC, n, s[1] as u32, s[2] as u32] {
        ib.extend_from_slice(&w.to_be_bytes());
    }
    ib.extend(dataset.images().data().iter().map(|&p| (p * 255.0).round() as u8));
    let mut lb = Vec::with_capacity(8 + dataset.len());
    lb.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lb.extend_from_slice(&n.to_be_bytes());
    lb.extend(dataset.labels().iter().map(|&l| l as u8));
    std::fs::write(images_path, ib).map_err(|e| Error::io(images_path, e))?;
    std::fs::write(labels_path, lb).map_err(|e| Error::io(labels_path, e))
}
