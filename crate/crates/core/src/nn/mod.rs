//! Minimal sequential neural networks with exact backpropagation.

mod backprop;
mod gemm;
mod layers;
mod loss;
mod model;
mod spec;

pub(crate) use backprop::{batch_gradients, for_each_example, GradPiece};
pub use backprop::{dense_forward, l2_penalty, loss_and_grads, per_example_grads, Gradients};
pub use loss::LossKind;
pub use model::{init_model, Model};
pub use spec::{Activation, LayerSpec, ModelSpec, ParamKind};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Rows per forward chunk during evaluation.
pub(crate) const EVAL_CHUNK: usize = 64;

/// Fraction of rows whose prediction equals the label. Single-output models
/// predict class 1 when `sigmoid(logit) >= 0.5`; others take the argmax,
/// ties going to the lowest class index.
pub fn accuracy(model: &Model, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset(
            "accuracy needs at least one row".into(),
        ));
    }
    let preds = predict(model, dataset)?;
    let correct = preds
        .iter()
        .zip(dataset.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

pub(crate) fn loss_for_width(width: usize) -> LossKind {
    if width == 1 {
        LossKind::SigmoidBinaryCrossEntropy
    } else {
        LossKind::SoftmaxCrossEntropy
    }
}

pub fn predict(model: &Model, dataset: &Dataset) -> Result<Vec<usize>> {
    let logits = model.forward_chunked(dataset.features(), EVAL_CHUNK)?;
    let width = model.output_dim();
    Ok(loss_for_width(width).predict(logits.data(), width))
}
