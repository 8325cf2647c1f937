//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue pixel bytes (each plane row-major).
//! Records are converted to height × width × channel order.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_RECORD_LEN: usize = 3073;
const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
const CLASSES: usize = 10;

/// Loads and concatenates one or more binary batch files.
pub fn load_cifar10_bin<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::EmptyDataset("no CIFAR-10 batch files given".into()));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let path = p.as_ref();
        if !path.exists() {
            return Err(Error::DataNotFound(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD_LEN != 0 {
            let whole = bytes.len() / CIFAR_RECORD_LEN * CIFAR_RECORD_LEN;
            return Err(Error::format(
                path,
                whole as u64,
                format!(
                    "size {} is not a positive multiple of {CIFAR_RECORD_LEN}",
                    bytes.len()
                ),
            ));
        }
        features.reserve(bytes.len() / CIFAR_RECORD_LEN * 3 * PLANE);
        for (r, rec) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
            let label = rec[0] as usize;
            if label >= CLASSES {
                return Err(Error::format(
                    path,
                    (r * CIFAR_RECORD_LEN) as u64,
                    format!("label {label} out of range"),
                ));
            }
            labels.push(label);
            let px = &rec[1..];
            for i in 0..PLANE {
                for c in 0..3 {
                    features.push(px[c * PLANE + i] as f64 / 255.0);
                }
            }
        }
    }
    let n = labels.len();
    Dataset::new(
        Tensor::from_parts(vec![n, SIDE, SIDE, 3], features),
        labels,
        CLASSES,
    )
}

/// Writes a `[n, 32, 32, 3]` dataset with features in `[0, 1]` as one
/// binary batch file.
pub fn write_cifar10_bin(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    if dataset.input_shape() != [SIDE, SIDE, 3] {
        return Err(Error::Shape(format!(
            "CIFAR records are 32x32x3, dataset rows are {:?}",
            dataset.input_shape()
        )));
    }
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD_LEN);
    for (i, &label) in dataset.labels().iter().enumerate() {
        if label >= CLASSES {
            return Err(Error::LabelOutOfRange {
                row: i,
                label,
                classes: CLASSES,
            });
        }
        out.push(label as u8);
        let row = dataset.features().row(i);
        for c in 0..3 {
            out.extend((0..PLANE).map(|p| (row[p * 3 + c].clamp(0.0, 1.0) * 255.0).round() as u8));
        }
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
