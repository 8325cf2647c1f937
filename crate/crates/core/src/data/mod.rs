//! Datasets, file-format loaders and synthetic generators.

mod cifar;
mod idx;
mod synth;
mod table;
mod text;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

pub use cifar::{load_cifar10_bin, write_cifar10_bin, CIFAR_RECORD_LEN};
pub use idx::{load_mnist_idx, write_mnist_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use synth::{
    synth_blobs, synth_classification, synth_images, BlobDistribution, BlobSpec, ImageSpec,
};
pub use table::{load_numeric_csv, write_numeric_csv};
pub use text::{
    fit_vectorizer, inject_bias, load_text_csv, synth_tweets, text_dataset, tokenize, vectorize,
    write_text_csv, BiasSpec, TextCorpus, TextVectorizer, TweetSpec, VULNERABLE,
};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

/// Labelled examples: `features` is `[n, ...input shape]`, one label per row.
///
/// `meta` holds optional per-row boolean attributes such as the
/// vulnerability flag added by [`inject_bias`].
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    meta: BTreeMap<String, Vec<bool>>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.shape().is_empty() || features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "features {:?} do not have one row per label ({})",
                features.shape(),
                labels.len()
            )));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            meta: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, key: &str, values: Vec<bool>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::Shape(format!(
                "attribute {key:?} has {} values for {} rows",
                values.len(),
                self.len()
            )));
        }
        self.meta.insert(key.to_string(), values);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Per-example feature shape.
    pub fn input_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn meta(&self, key: &str) -> Option<&[bool]> {
        self.meta.get(key).map(Vec::as_slice)
    }

    pub(crate) fn set_labels(&mut self, labels: Vec<usize>) {
        debug_assert_eq!(labels.len(), self.labels.len());
        self.labels = labels;
    }

    /// Rows at `indices`, in that order, with their attributes.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            meta: self
                .meta
                .iter()
                .map(|(k, v)| (k.clone(), indices.iter().map(|&i| v[i]).collect()))
                .collect(),
        }
    }

    /// The same rows with each example reshaped to `shape` (same element count).
    pub fn reshape_inputs(&self, shape: &[usize]) -> Result<Dataset> {
        if self.input_shape() == shape {
            return Ok(self.clone());
        }
        let per_row: usize = shape.iter().product();
        if per_row != self.features.row_len() {
            return Err(Error::Shape(format!(
                "rows of shape {:?} cannot be viewed as {shape:?}",
                self.input_shape()
            )));
        }
        let mut full = vec![self.len()];
        full.extend_from_slice(shape);
        Ok(Dataset {
            features: self.features.clone().reshape(full)?,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            meta: self.meta.clone(),
        })
    }

    /// The first `n` rows (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// A uniformly random subset of `n` rows (all rows if `n >= len`), in
    /// shuffled order.
    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng_from_seed(seed));
        idx.truncate(n.min(self.len()));
        self.subset(&idx)
    }

    /// Appends the rows of `other`; attributes are kept only if both sides
    /// carry them.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.input_shape() != other.input_shape() {
            return Err(Error::Shape(format!(
                "cannot concatenate rows of shape {:?} and {:?}",
                self.input_shape(),
                other.input_shape()
            )));
        }
        let mut data = self.features.data().to_vec();
        data.extend_from_slice(other.features.data());
        let mut shape = self.features.shape().to_vec();
        shape[0] += other.len();
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let meta = self
            .meta
            .iter()
            .filter_map(|(k, v)| {
                other
                    .meta
                    .get(k)
                    .map(|w| (k.clone(), v.iter().chain(w).copied().collect()))
            })
            .collect();
        Ok(Dataset {
            features: Tensor::from_parts(shape, data),
            labels,
            num_classes: self.num_classes.max(other.num_classes),
            meta,
        })
    }
}

/// Shuffled disjoint split: the first side gets `round(fraction * n)` rows.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = dataset.len();
    let k = (fraction * n as f64).round() as usize;
    if k == 0 || k == n {
        return Err(Error::InvalidConfig(format!(
            "splitting {n} rows at {fraction} leaves one side empty"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    Ok((dataset.subset(&idx[..k]), dataset.subset(&idx[k..])))
}
