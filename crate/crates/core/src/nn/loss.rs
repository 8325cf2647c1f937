use serde::{Deserialize, Serialize};

use super::spec::sigmoid;
use crate::error::{Error, Result};

/// Output loss. Both variants take raw logits; the softmax or sigmoid is fused
/// into the loss so it can be evaluated stably.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SoftmaxCrossEntropy,
    SigmoidBinaryCrossEntropy,
}

impl LossKind {
    /// Checks that a model with `width` outputs can be trained with this loss.
    pub fn check_width(self, width: usize) -> Result<()> {
        match self {
            LossKind::SigmoidBinaryCrossEntropy if width != 1 => Err(Error::InvalidSpec(format!(
                "binary cross-entropy needs a single output unit, model has {width}"
            ))),
            LossKind::SoftmaxCrossEntropy if width < 2 => Err(Error::InvalidSpec(format!(
                "softmax cross-entropy needs at least 2 output units, model has {width}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn num_classes(self, width: usize) -> usize {
        match self {
            LossKind::SoftmaxCrossEntropy => width,
            LossKind::SigmoidBinaryCrossEntropy => 2,
        }
    }

    /// Per-example losses and per-example logit gradients (not batch-averaged).
    pub(crate) fn evaluate(
        self,
        logits: &[f64],
        width: usize,
        labels: &[usize],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_width(width)?;
        let classes = self.num_classes(width);
        let mut losses = Vec::with_capacity(labels.len());
        let mut grad = vec![0.0; logits.len()];
        for (row, (&label, z)) in labels.iter().zip(logits.chunks_exact(width)).enumerate() {
            if label >= classes {
                return Err(Error::LabelOutOfRange {
                    row,
                    label,
                    classes,
                });
            }
            let g = &mut grad[row * width..(row + 1) * width];
            match self {
                LossKind::SoftmaxCrossEntropy => {
                    let lse = log_sum_exp(z);
                    for (gi, &zi) in g.iter_mut().zip(z) {
                        *gi = (zi - lse).exp();
                    }
                    g[label] -= 1.0;
                    losses.push(lse - z[label]);
                }
                LossKind::SigmoidBinaryCrossEntropy => {
                    let (z, y) = (z[0], label as f64);
                    losses.push(z.max(0.0) - z * y + (-z.abs()).exp().ln_1p());
                    g[0] = sigmoid(z) - y;
                }
            }
        }
        Ok((losses, grad))
    }

    /// Class probabilities per row. Binary models report `[1 - p, p]`.
    pub fn probabilities(self, logits: &[f64], width: usize) -> Vec<Vec<f64>> {
        logits
            .chunks_exact(width)
            .map(|z| match self {
                LossKind::SoftmaxCrossEntropy => {
                    let lse = log_sum_exp(z);
                    z.iter().map(|&zi| (zi - lse).exp()).collect()
                }
                LossKind::SigmoidBinaryCrossEntropy => {
                    let p = sigmoid(z[0]);
                    vec![1.0 - p, p]
                }
            })
            .collect()
    }

    /// Predicted class per row: argmax with ties to the lowest index, or
    /// `sigmoid(z) >= 0.5` for the binary loss.
    pub fn predict(self, logits: &[f64], width: usize) -> Vec<usize> {
        logits
            .chunks_exact(width)
            .map(|z| match self {
                LossKind::SoftmaxCrossEntropy => argmax(z),
                LossKind::SigmoidBinaryCrossEntropy => usize::from(z[0] >= 0.0),
            })
            .collect()
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}
