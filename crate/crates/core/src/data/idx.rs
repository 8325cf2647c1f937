//! MNIST IDX files (big-endian). Images: magic `0x00000803`, count, rows,
//! cols, then one byte per pixel. Labels: magic `0x00000801`, count, then
//! one byte per label.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const MNIST_CLASSES: usize = 10;

fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::DataNotFound(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, offset as u64, "truncated header"))
}

/// Loads an image/label IDX pair. Pixels are scaled to `[0, 1]` and each
/// image is flattened to `rows * cols` features.
pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = read(ip)?;
    let labels = read(lp)?;

    let magic = be_u32(&images, 0, ip)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            ip,
            0,
            format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(&images, 4, ip)? as usize;
    let rows = be_u32(&images, 8, ip)? as usize;
    let cols = be_u32(&images, 12, ip)? as usize;
    let dim = rows * cols;
    let expected = 16 + n * dim;
    if images.len() != expected {
        return Err(Error::format(
            ip,
            images.len().min(expected) as u64,
            format!(
                "expected {expected} bytes for {n} images of {rows}x{cols}, found {}",
                images.len()
            ),
        ));
    }

    let magic = be_u32(&labels, 0, lp)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            lp,
            0,
            format!("label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let n_labels = be_u32(&labels, 4, lp)? as usize;
    if n_labels != n {
        return Err(Error::format(
            lp,
            4,
            format!("{n_labels} labels for {n} images"),
        ));
    }
    if labels.len() != 8 + n {
        return Err(Error::format(
            lp,
            labels.len().min(8 + n) as u64,
            format!(
                "expected {} bytes for {n} labels, found {}",
                8 + n,
                labels.len()
            ),
        ));
    }
    let ys: Vec<usize> = labels[8..].iter().map(|&b| b as usize).collect();
    if let Some(pos) = ys.iter().position(|&y| y >= MNIST_CLASSES) {
        return Err(Error::format(
            lp,
            (8 + pos) as u64,
            format!("label {} is not a digit", ys[pos]),
        ));
    }
    let pixels: Vec<f64> = images[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Dataset::new(Tensor::from_parts(vec![n, dim], pixels), ys, MNIST_CLASSES)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a dataset of square grayscale images (features in `[0, 1]`) as an
/// IDX pair. Values are quantized to bytes.
pub fn write_mnist_idx(
    dataset: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let dim = dataset.features().row_len();
    let side = (dim as f64).sqrt().round() as usize;
    if side * side != dim {
        return Err(Error::Shape(format!(
            "{dim} features do not form a square image"
        )));
    }
    if let Some(&y) = dataset.labels().iter().find(|&&y| y > 255) {
        return Err(Error::InvalidConfig(format!(
            "label {y} does not fit in a byte"
        )));
    }
    let n = dataset.len() as u32;
    let mut img = Vec::with_capacity(16 + dataset.features().len());
    for v in [IDX_IMAGES_MAGIC, n, side as u32, side as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(dataset.features().data().iter().map(|&v| to_byte(v)));
    let mut lab = Vec::with_capacity(8 + dataset.len());
    for v in [IDX_LABELS_MAGIC, n] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(dataset.labels().iter().map(|&y| y as u8));
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    fs::write(ip, img).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, lab).map_err(|e| Error::io(lp, e))
}
