use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    adam_step, add_noise, apply_weight_decay, sgd_step, DpConfig, OptimizerConfig, OptimizerKind,
    OptimizerState,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    self, batch_gradients, for_each_example, l2_penalty, GradPiece, Gradients, LossKind, Model,
};
use crate::rng::{derive_seed, rng_from_seed, Rng, STREAM_NOISE, STREAM_SHUFFLE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Present exactly when `optimizer.kind` is `dp_adam`.
    pub dp: Option<DpConfig>,
    /// L2 strength λ; the penalty is `λ Σ w²` over weight tensors.
    pub l2_lambda: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            dp: None,
            l2_lambda: 0.0,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "l2_lambda must be >= 0, got {}",
                self.l2_lambda
            )));
        }
        self.optimizer.validate()?;
        match (&self.dp, self.optimizer.kind) {
            (Some(dp), OptimizerKind::DpAdam) => dp.validate(self.batch_size),
            (None, OptimizerKind::DpAdam) => {
                Err(Error::InvalidConfig("dp_adam needs a dp section".into()))
            }
            (Some(_), kind) => Err(Error::InvalidConfig(format!(
                "a dp section requires optimizer kind dp_adam, found {kind:?}"
            ))),
            (None, _) => Ok(()),
        }
    }
}

/// Per-epoch training curves. Train loss and accuracy are running averages
/// over the epoch's batches (before each update); validation accuracy is
/// measured after the epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }
}

/// Clipped-and-noised gradient of one batch: microbatch mean gradients are
/// clipped to `clip_norm`, summed, perturbed by `N(0, (σC)²)` per coordinate
/// and divided by the number of microbatches. A trailing partial microbatch
/// counts as one.
pub(crate) fn dp_gradients(
    model: &Model,
    input: &[f64],
    n: usize,
    labels: &[usize],
    loss: LossKind,
    dp: &DpConfig,
    rng: &mut Rng,
) -> Result<(Gradients, usize)> {
    let mut acc = Gradients::zeros_like(model);
    let mut loss_sum = 0.0;
    let mut units = 0usize;
    let mut buffer: Option<Vec<GradPiece>> = None;
    let mut in_buffer = 0usize;
    let clip = |pieces: &[GradPiece]| {
        let norm = pieces
            .iter()
            .map(GradPiece::sum_squares)
            .sum::<f64>()
            .sqrt();
        if norm > dp.clip_norm {
            dp.clip_norm / norm
        } else {
            1.0
        }
    };
    let correct = for_each_example(model, input, n, labels, loss, |i, l, pieces| {
        loss_sum += l;
        if dp.microbatch_size == 1 {
            acc.add_pieces(&pieces, clip(&pieces));
            units += 1;
            return Ok(());
        }
        match buffer.as_mut() {
            None => buffer = Some(pieces),
            Some(buf) => buf.iter_mut().zip(&pieces).for_each(|(a, b)| a.merge(b)),
        }
        in_buffer += 1;
        if in_buffer == dp.microbatch_size || i + 1 == n {
            let mut buf = buffer.take().expect("buffer holds at least one example");
            buf.iter_mut().for_each(|p| p.scale(1.0 / in_buffer as f64));
            acc.add_pieces(&buf, clip(&buf));
            units += 1;
            in_buffer = 0;
        }
        Ok(())
    })?;
    add_noise(&mut acc, dp.noise_multiplier * dp.clip_norm, rng);
    acc.scale(1.0 / units as f64);
    acc.loss = loss_sum / n as f64;
    Ok((acc, correct))
}

fn diverged(epoch: usize, step: usize, loss: f64) -> Error {
    Error::Diverged { epoch, step, loss }
}

/// Trains for `cfg.epochs` passes of `⌈n / batch_size⌉` updates each.
///
/// Each step computes the batch gradient (or, with DP, the clipped and
/// noised aggregate), adds `2λw` to weight gradients and applies the
/// optimizer. The run is a pure function of its inputs and `cfg.seed`.
/// A non-finite loss or gradient aborts with the 1-based epoch and step.
pub fn train(
    mut model: Model,
    train_set: &Dataset,
    val_set: &Dataset,
    loss: LossKind,
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset(
            "training needs nonempty train and validation sets".into(),
        ));
    }
    loss.check_width(model.output_dim())?;
    let classes = loss.num_classes(model.output_dim());
    for ds in [train_set, val_set] {
        if let Some((row, &label)) = ds.labels().iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                classes,
            });
        }
    }

    let n = train_set.len();
    let mut state = OptimizerState::new(&model);
    let mut noise_rng = rng_from_seed(derive_seed(cfg.seed, &[STREAM_NOISE]));
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.sort_unstable();
            order.shuffle(&mut rng_from_seed(derive_seed(
                cfg.seed,
                &[STREAM_SHUFFLE, epoch as u64],
            )));
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (s, idx) in order.chunks(cfg.batch_size).enumerate() {
            let step = s + 1;
            let batch = train_set.features().select_rows(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels()[i]).collect();
            let result = match &cfg.dp {
                Some(dp) => dp_gradients(
                    &model,
                    batch.data(),
                    idx.len(),
                    &labels,
                    loss,
                    dp,
                    &mut noise_rng,
                ),
                None => batch_gradients(&model, batch.data(), idx.len(), &labels, loss),
            };
            let (mut grads, c) = result.map_err(|e| match e {
                Error::NonFinite(_) => diverged(epoch, step, f64::NAN),
                other => other,
            })?;
            let batch_loss = grads.loss + l2_penalty(&model, cfg.l2_lambda);
            apply_weight_decay(&mut grads, &model, cfg.l2_lambda)?;
            if !batch_loss.is_finite() || !grads.all_finite() {
                return Err(diverged(epoch, step, batch_loss));
            }
            match cfg.optimizer.kind {
                OptimizerKind::Sgd => sgd_step(&mut model, &grads, cfg.optimizer.learning_rate)?,
                OptimizerKind::Adam | OptimizerKind::DpAdam => {
                    adam_step(&mut model, &grads, &mut state, &cfg.optimizer)?
                }
            }
            loss_sum += batch_loss * idx.len() as f64;
            correct += c;
        }
        let val = nn::accuracy(&model, val_set).map_err(|e| match e {
            Error::NonFinite(_) => diverged(epoch, n.div_ceil(cfg.batch_size), f64::NAN),
            other => other,
        })?;
        history.train_loss.push(loss_sum / n as f64);
        history.train_accuracy.push(correct as f64 / n as f64);
        history.val_accuracy.push(val);
        log::info!(
            "epoch {epoch}/{}: loss {:.4} train acc {:.4} val acc {val:.4}",
            cfg.epochs,
            loss_sum / n as f64,
            correct as f64 / n as f64
        );
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_classification;
    use crate::nn::{init_model, per_example_grads, ModelSpec};
    use crate::optim::{clip_to_norm, dp_aggregate};

    fn dp_cfg(sigma: f64, clip: f64) -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerConfig {
                kind: OptimizerKind::DpAdam,
                ..OptimizerConfig::default()
            },
            dp: Some(DpConfig {
                noise_multiplier: sigma,
                clip_norm: clip,
                microbatch_size: 1,
            }),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn streaming_dp_matches_list_based_aggregation() {
        let (ds, _) = synth_classification(8, 3, 2, 1.0, 2);
        let model = init_model(&ModelSpec::mlp(3, &[5], 2), 1).unwrap();
        let dp = DpConfig {
            noise_multiplier: 1.1,
            clip_norm: 0.05,
            microbatch_size: 1,
        };
        let loss = LossKind::SoftmaxCrossEntropy;
        let (fast, _) = dp_gradients(
            &model,
            ds.features().data(),
            8,
            ds.labels(),
            loss,
            &dp,
            &mut rng_from_seed(9),
        )
        .unwrap();
        let clipped: Vec<Gradients> = per_example_grads(&model, ds.features(), ds.labels(), loss)
            .unwrap()
            .iter()
            .map(|g| clip_to_norm(g, 0.05))
            .collect();
        let slow = dp_aggregate(&clipped, 1.1, 0.05, &mut rng_from_seed(9)).unwrap();
        for (a, b) in fast.tensors.iter().zip(&slow.tensors) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dp_path_without_noise_or_clipping_tracks_plain_adam() {
        let (train_set, val) = synth_classification(100, 4, 2, 2.0, 5);
        let model = init_model(&ModelSpec::mlp(4, &[8], 2), 3).unwrap();
        let base = TrainConfig {
            epochs: 1,
            batch_size: 10,
            seed: 11,
            ..TrainConfig::default()
        };
        let dp = TrainConfig {
            epochs: 1,
            batch_size: 10,
            seed: 11,
            ..dp_cfg(0.0, 1e9)
        };
        let loss = LossKind::SoftmaxCrossEntropy;
        let (a, _) = train(model.clone(), &train_set, &val, loss, &base).unwrap();
        let (b, _) = train(model, &train_set, &val, loss, &dp).unwrap();
        let max = a
            .params()
            .iter()
            .zip(b.params())
            .flat_map(|(p, q)| p.data().iter().zip(q.data()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        assert!(max < 1e-6, "max divergence {max}");
    }

    #[test]
    fn one_epoch_improves_separable_toy_accuracy() {
        let (train_set, val) = synth_classification(200, 2, 2, 6.0, 1);
        let model = init_model(&ModelSpec::mlp(2, &[], 2), 4).unwrap();
        let before = nn::accuracy(&model, &train_set).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            optimizer: OptimizerConfig {
                learning_rate: 0.05,
                ..OptimizerConfig::default()
            },
            ..TrainConfig::default()
        };
        let (trained, hist) =
            train(model, &train_set, &val, LossKind::SoftmaxCrossEntropy, &cfg).unwrap();
        let after = nn::accuracy(&trained, &train_set).unwrap();
        assert!(after > before, "{before} -> {after}");
        assert_eq!(hist.epochs(), 1);
    }

    #[test]
    fn identical_configs_give_identical_histories() {
        let (train_set, val) = synth_classification(64, 3, 3, 1.5, 8);
        let model = init_model(&ModelSpec::mlp(3, &[6], 3), 2).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..dp_cfg(1.1, 1.0)
        };
        let loss = LossKind::SoftmaxCrossEntropy;
        let a = train(model.clone(), &train_set, &val, loss, &cfg).unwrap();
        let b = train(model, &train_set, &val, loss, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn huge_learning_rate_diverges_with_location() {
        let (mut train_set, val) = synth_classification(64, 2, 2, 1.0, 8);
        let scaled = train_set
            .features()
            .data()
            .iter()
            .map(|v| v * 1e150)
            .collect();
        train_set = Dataset::new(
            crate::tensor::Tensor::new(train_set.features().shape().to_vec(), scaled).unwrap(),
            train_set.labels().to_vec(),
            2,
        )
        .unwrap();
        let model = init_model(&ModelSpec::mlp(2, &[4], 2), 0).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Sgd,
                learning_rate: 1e10,
                ..OptimizerConfig::default()
            },
            ..TrainConfig::default()
        };
        match train(model, &train_set, &val, LossKind::SoftmaxCrossEntropy, &cfg) {
            Err(Error::Diverged { epoch, step, .. }) => assert!(epoch >= 1 && step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn dp_kind_and_section_must_agree() {
        let mut cfg = dp_cfg(1.0, 1.0);
        assert!(cfg.validate().is_ok());
        cfg.optimizer.kind = OptimizerKind::Adam;
        assert!(cfg.validate().is_err());
        cfg.dp = None;
        assert!(cfg.validate().is_ok());
        cfg.optimizer.kind = OptimizerKind::DpAdam;
        assert!(cfg.validate().is_err());
    }
}
