//! Oracles and fixtures shared by the property tests and the acceptance run.
#![allow(dead_code)]

use privaudit_core::nn::{
    init_model, loss_and_grads, Activation, LayerSpec, LossKind, Model, ModelSpec,
};
use privaudit_core::rng::rng_from_seed;
use privaudit_core::Tensor;
use rand::Rng as _;

/// The layer kinds a gradient check has to cover.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Dense,
    Conv,
    Pool,
    Embedding,
}

pub const ARCHS: [Arch; 4] = [Arch::Dense, Arch::Conv, Arch::Pool, Arch::Embedding];

fn dense(units: usize, activation: Activation) -> LayerSpec {
    LayerSpec::Dense { units, activation }
}

/// A small model of the given kind whose output suits `loss`.
pub fn small_spec(arch: Arch, loss: LossKind, act: Activation) -> ModelSpec {
    let out = match loss {
        LossKind::SoftmaxCrossEntropy => 3,
        LossKind::SigmoidBinaryCrossEntropy => 1,
    };
    let head = dense(out, Activation::Identity);
    match arch {
        Arch::Dense => ModelSpec {
            input_shape: vec![5],
            layers: vec![dense(4, act), dense(3, act), head],
        },
        Arch::Conv => ModelSpec {
            input_shape: vec![4, 3, 2],
            layers: vec![
                LayerSpec::Conv2d {
                    filters: 3,
                    kernel_h: 3,
                    kernel_w: 3,
                    activation: act,
                },
                LayerSpec::Flatten,
                head,
            ],
        },
        Arch::Pool => ModelSpec {
            input_shape: vec![5, 4, 2],
            layers: vec![
                LayerSpec::Conv2d {
                    filters: 2,
                    kernel_h: 2,
                    kernel_w: 3,
                    activation: act,
                },
                LayerSpec::AvgPool2d {
                    pool_h: 2,
                    pool_w: 2,
                },
                LayerSpec::Flatten,
                head,
            ],
        },
        Arch::Embedding => ModelSpec {
            input_shape: vec![6],
            layers: vec![
                LayerSpec::Embedding {
                    vocab_size: 7,
                    embed_dim: 4,
                },
                LayerSpec::GlobalAvgPool1d,
                dense(3, act),
                head,
            ],
        },
    }
}

/// A random batch for `spec`: token IDs for embedding inputs, Gaussian-ish
/// values otherwise, and labels valid for `loss`.
pub fn random_batch(spec: &ModelSpec, loss: LossKind, n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = rng_from_seed(seed);
    let per: usize = spec.input_shape.iter().product();
    let vocab = spec.layers.iter().find_map(|l| match l {
        LayerSpec::Embedding { vocab_size, .. } => Some(*vocab_size),
        _ => None,
    });
    let data: Vec<f64> = (0..n * per)
        .map(|_| match vocab {
            Some(v) => rng.random_range(0..v) as f64,
            None => rng.random_range(-1.5..1.5),
        })
        .collect();
    let mut shape = vec![n];
    shape.extend(&spec.input_shape);
    let classes = match loss {
        LossKind::SoftmaxCrossEntropy => 3,
        LossKind::SigmoidBinaryCrossEntropy => 2,
    };
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (Tensor::new(shape, data).unwrap(), labels)
}

pub fn random_model(spec: &ModelSpec, seed: u64) -> Model {
    init_model(spec, seed).unwrap()
}

fn with_param(model: &Model, p: usize, i: usize, value: f64) -> Model {
    let mut params = model.params().to_vec();
    params[p].data_mut()[i] = value;
    Model::from_params(model.spec().clone(), params).unwrap()
}

/// Largest relative error between analytic and central-difference
/// gradients of the penalized batch loss. Coordinates where the one-sided
/// differences disagree (a ReLU kink inside the step) are skipped.
pub fn max_gradient_error(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    loss: LossKind,
    l2_lambda: f64,
    h: f64,
) -> f64 {
    let analytic = loss_and_grads(model, batch, labels, loss, l2_lambda).unwrap();
    let f = |m: &Model| {
        loss_and_grads(m, batch, labels, loss, l2_lambda)
            .unwrap()
            .loss
    };
    let f0 = f(model);
    let mut worst: f64 = 0.0;
    for (p, t) in model.params().iter().enumerate() {
        for i in 0..t.len() {
            let w = t.data()[i];
            let fp = f(&with_param(model, p, i, w + h));
            let fm = f(&with_param(model, p, i, w - h));
            let fwd = (fp - f0) / h;
            let bwd = (f0 - fm) / h;
            if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1e-2) {
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.tensors[p].data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

/// Attack advantage by exhaustive counting over every threshold rule
/// `score >= t`, with `t` ranging over the distinct scores and `+inf`.
pub fn brute_force_advantage(members: &[f64], nonmembers: &[f64]) -> f64 {
    let mut ts: Vec<f64> = members.iter().chain(nonmembers).copied().collect();
    ts.push(f64::INFINITY);
    let mut best: f64 = 0.0;
    for &t in &ts {
        let tp = members.iter().filter(|&&s| s >= t).count() as f64 / members.len() as f64;
        let fp = nonmembers.iter().filter(|&&s| s >= t).count() as f64 / nonmembers.len() as f64;
        best = best.max(tp - fp);
    }
    best
}

/// Maximum of `TPR − FPR` over every subset of the distinct scores that is
/// closed upwards (the threshold-form rules), by bitmask enumeration.
pub fn subset_enumeration_advantage(members: &[f64], nonmembers: &[f64]) -> f64 {
    let mut distinct: Vec<f64> = members.iter().chain(nonmembers).copied().collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let d = distinct.len();
    assert!(d <= 16, "enumeration is exponential");
    let mut best: f64 = 0.0;
    for mask in 0u32..(1 << d) {
        let upward =
            (0..d).all(|i| mask & (1 << i) == 0 || (i + 1..d).all(|j| mask & (1 << j) != 0));
        if !upward {
            continue;
        }
        let inside = |s: f64| {
            let i = distinct.partition_point(|&v| v < s);
            mask & (1 << i) != 0
        };
        let tp = members.iter().filter(|&&s| inside(s)).count() as f64 / members.len() as f64;
        let fp = nonmembers.iter().filter(|&&s| inside(s)).count() as f64 / nonmembers.len() as f64;
        best = best.max(tp - fp);
    }
    best
}

/// Two-pass Pearson correlation.
pub fn pearson_two_pass(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}
