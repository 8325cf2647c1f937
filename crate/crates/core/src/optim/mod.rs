//! Parameter updates: SGD, Adam, L2 weight decay and DP-Adam aggregation.

// Negated comparisons below also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod train;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use train::{train, TrainConfig, TrainHistory};

use crate::error::{Error, Result};
use crate::nn::{Gradients, Model, ParamKind};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    /// Adam on clipped, noised per-example gradients; requires a DP config.
    DpAdam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be in [0, 1), got {b}"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Differential-privacy settings for DP-Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpConfig {
    /// Noise standard deviation in units of `clip_norm`.
    pub noise_multiplier: f64,
    pub clip_norm: f64,
    /// Examples whose mean gradient is clipped as one unit.
    pub microbatch_size: usize,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            noise_multiplier: 1.1,
            clip_norm: 1.0,
            microbatch_size: 1,
        }
    }
}

impl DpConfig {
    pub fn validate(&self, batch_size: usize) -> Result<()> {
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise_multiplier must be >= 0, got {}",
                self.noise_multiplier
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "clip_norm must be > 0, got {}",
                self.clip_norm
            )));
        }
        if self.microbatch_size == 0 || !batch_size.is_multiple_of(self.microbatch_size) {
            return Err(Error::InvalidConfig(format!(
                "microbatch_size {} must be positive and divide batch_size {batch_size}",
                self.microbatch_size
            )));
        }
        Ok(())
    }
}

/// Adam moments, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    pub fn new(model: &Model) -> Self {
        let zeros = || {
            model
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect()
        };
        OptimizerState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Adds `2λw` to the gradient of every weight matrix and filter.
pub fn apply_weight_decay(grads: &mut Gradients, model: &Model, l2_lambda: f64) -> Result<()> {
    if !(l2_lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "l2_lambda must be >= 0, got {l2_lambda}"
        )));
    }
    grads.check_model(model)?;
    if l2_lambda == 0.0 {
        return Ok(());
    }
    for ((g, p), kind) in grads
        .tensors
        .iter_mut()
        .zip(model.params())
        .zip(model.param_kinds())
    {
        if *kind == ParamKind::Weight {
            for (gv, &w) in g.data_mut().iter_mut().zip(p.data()) {
                *gv += 2.0 * l2_lambda * w;
            }
        }
    }
    Ok(())
}

/// One bias-corrected Adam update.
pub fn adam_step(
    model: &mut Model,
    grads: &Gradients,
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<()> {
    grads.check_model(model)?;
    let congruent = state.m.len() == grads.tensors.len()
        && state
            .m
            .iter()
            .zip(&grads.tensors)
            .all(|(m, g)| m.same_shape(g));
    if !congruent {
        return Err(Error::Shape(
            "optimizer state does not match the model".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2, lr, eps) = (cfg.beta1, cfg.beta2, cfg.learning_rate, cfg.epsilon);
    for (((p, g), m), v) in model
        .params_mut()
        .iter_mut()
        .zip(&grads.tensors)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Plain gradient descent: `w ← w − η g`.
pub fn sgd_step(model: &mut Model, grads: &Gradients, learning_rate: f64) -> Result<()> {
    grads.check_model(model)?;
    for (p, g) in model.params_mut().iter_mut().zip(&grads.tensors) {
        for (w, &gi) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= learning_rate * gi;
        }
    }
    Ok(())
}

/// Scales `g` by `min(1, C / ‖g‖)` using the global norm over all tensors.
pub fn clip_to_norm(g: &Gradients, clip_norm: f64) -> Gradients {
    let mut out = g.clone();
    let norm = g.global_norm();
    if norm > clip_norm {
        out.scale(clip_norm / norm);
    }
    out
}

/// `(Σ clipped + N(0, σ²C²·I)) / clipped.len()`. Noise is drawn elementwise
/// with `rand_distr::StandardNormal` from `rng`, in parameter order.
pub fn dp_aggregate(
    clipped: &[Gradients],
    noise_multiplier: f64,
    clip_norm: f64,
    rng: &mut Rng,
) -> Result<Gradients> {
    let first = clipped
        .first()
        .ok_or_else(|| Error::EmptyDataset("no gradients to aggregate".into()))?;
    let mut sum = first.clone();
    for g in &clipped[1..] {
        sum.add_assign(g)?;
    }
    sum.loss = clipped.iter().map(|g| g.loss).sum::<f64>() / clipped.len() as f64;
    add_noise(&mut sum, noise_multiplier * clip_norm, rng);
    sum.scale(1.0 / clipped.len() as f64);
    Ok(sum)
}

pub(crate) fn add_noise(g: &mut Gradients, std: f64, rng: &mut Rng) {
    if std == 0.0 {
        return;
    }
    for t in &mut g.tensors {
        for v in t.data_mut() {
            *v += std * rng.sample::<f64, _>(StandardNormal);
        }
    }
}
