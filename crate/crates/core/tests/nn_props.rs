mod common;

use common::{max_gradient_error, random_batch, random_model, small_spec, Arch, ARCHS};
use privaudit_core::nn::{
    init_model, l2_penalty, loss_and_grads, per_example_grads, Activation, LayerSpec, LossKind,
    ModelSpec, ParamKind,
};
use privaudit_core::{Error, Model, Tensor};
use proptest::prelude::*;

const LOSSES: [LossKind; 2] = [
    LossKind::SoftmaxCrossEntropy,
    LossKind::SigmoidBinaryCrossEntropy,
];

fn arch() -> impl Strategy<Value = Arch> {
    prop::sample::select(ARCHS.to_vec())
}

fn loss() -> impl Strategy<Value = LossKind> {
    prop::sample::select(LOSSES.to_vec())
}

fn activation() -> impl Strategy<Value = Activation> {
    prop::sample::select(vec![
        Activation::Sigmoid,
        Activation::Relu,
        Activation::Identity,
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn analytic_gradients_match_finite_differences(
        arch in arch(), loss in loss(), act in activation(), seed in any::<u64>(), lambda in 0.0..0.01f64,
    ) {
        let spec = small_spec(arch, loss, act);
        let model = random_model(&spec, seed);
        let (x, y) = random_batch(&spec, loss, 3, seed ^ 0x5eed);
        let err = max_gradient_error(&model, &x, &y, loss, lambda, 1e-5);
        prop_assert!(err <= 1e-4, "{arch:?} {loss:?} {act:?}: relative error {err}");
    }

    #[test]
    fn penalty_adds_two_lambda_w_to_weights_only(
        arch in arch(), loss in loss(), seed in any::<u64>(), lambda in 0.0..1.0f64,
    ) {
        let spec = small_spec(arch, loss, Activation::Relu);
        let model = random_model(&spec, seed);
        let (x, y) = random_batch(&spec, loss, 4, seed.wrapping_add(1));
        let plain = loss_and_grads(&model, &x, &y, loss, 0.0).unwrap();
        let pen = loss_and_grads(&model, &x, &y, loss, lambda).unwrap();
        prop_assert!((pen.loss - plain.loss - l2_penalty(&model, lambda)).abs() <= 1e-12 * pen.loss.abs().max(1.0));
        for (((a, b), w), kind) in pen.tensors.iter().zip(&plain.tensors).zip(model.params()).zip(model.param_kinds()) {
            let scale = if *kind == ParamKind::Weight { 2.0 * lambda } else { 0.0 };
            for ((a, b), w) in a.data().iter().zip(b.data()).zip(w.data()) {
                prop_assert!((a - b - scale * w).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn per_example_gradients_average_to_the_batch_gradient(
        arch in arch(), loss in loss(), seed in any::<u64>(), n in 1usize..6,
    ) {
        let spec = small_spec(arch, loss, Activation::Relu);
        let model = random_model(&spec, seed);
        let (x, y) = random_batch(&spec, loss, n, seed.wrapping_add(2));
        let batch = loss_and_grads(&model, &x, &y, loss, 0.0).unwrap();
        let each = per_example_grads(&model, &x, &y, loss).unwrap();
        prop_assert_eq!(each.len(), n);
        let mean_loss = each.iter().map(|g| g.loss).sum::<f64>() / n as f64;
        prop_assert!((mean_loss - batch.loss).abs() <= 1e-12 * batch.loss.abs().max(1.0));
        for (p, t) in batch.tensors.iter().enumerate() {
            for i in 0..t.len() {
                let mean = each.iter().map(|g| g.tensors[p].data()[i]).sum::<f64>() / n as f64;
                prop_assert!((mean - t.data()[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_deterministic_and_init_is_seeded(arch in arch(), loss in loss(), seed in any::<u64>()) {
        let spec = small_spec(arch, loss, Activation::Relu);
        let (x, _) = random_batch(&spec, loss, 4, seed);
        let a = random_model(&spec, seed);
        let b = random_model(&spec, seed);
        prop_assert_eq!(a.params(), b.params());
        prop_assert_eq!(a.forward(&x).unwrap(), a.forward(&x).unwrap());
        prop_assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
        let c = random_model(&spec, seed.wrapping_add(1));
        prop_assert_ne!(a.params(), c.params());
    }

    #[test]
    fn uniform_logits_cost_ln_k(k in 2usize..12, n in 1usize..5) {
        // Zero weights give all-zero logits.
        let spec = ModelSpec::mlp(3, &[], k);
        let model = init_model(&spec, 0).unwrap();
        let zeros = model.params().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        let model = Model::from_params(spec, zeros).unwrap();
        let x = Tensor::new(vec![n, 3], vec![0.7; n * 3]).unwrap();
        let y: Vec<usize> = (0..n).map(|i| i % k).collect();
        let g = loss_and_grads(&model, &x, &y, LossKind::SoftmaxCrossEntropy, 0.0).unwrap();
        prop_assert!((g.loss - (k as f64).ln()).abs() <= 1e-12);
    }
}

#[test]
fn zero_logit_costs_ln_2_under_sigmoid_loss() {
    let spec = ModelSpec::mlp(2, &[], 1);
    let model = init_model(&spec, 0).unwrap();
    let zeros = model
        .params()
        .iter()
        .map(|t| Tensor::zeros(t.shape().to_vec()))
        .collect();
    let model = Model::from_params(spec, zeros).unwrap();
    let x = Tensor::new(vec![2, 2], vec![1.0, -1.0, 0.5, 2.0]).unwrap();
    let g = loss_and_grads(
        &model,
        &x,
        &[0, 1],
        LossKind::SigmoidBinaryCrossEntropy,
        0.0,
    )
    .unwrap();
    assert!((g.loss - 2f64.ln()).abs() <= 1e-12);
}

#[test]
fn incompatible_layer_stacks_are_rejected_at_construction() {
    let bad = [
        // Conv needs a rank-3 input.
        ModelSpec {
            input_shape: vec![10],
            layers: vec![LayerSpec::Conv2d {
                filters: 2,
                kernel_h: 3,
                kernel_w: 3,
                activation: Activation::Relu,
            }],
        },
        // Pool window larger than the map.
        ModelSpec {
            input_shape: vec![2, 2, 1],
            layers: vec![LayerSpec::AvgPool2d {
                pool_h: 3,
                pool_w: 3,
            }],
        },
        // Embedding after a dense layer.
        ModelSpec {
            input_shape: vec![4],
            layers: vec![
                LayerSpec::Dense {
                    units: 3,
                    activation: Activation::Relu,
                },
                LayerSpec::Embedding {
                    vocab_size: 5,
                    embed_dim: 2,
                },
            ],
        },
        // Zero-width layer.
        ModelSpec::mlp(4, &[0], 2),
    ];
    for spec in bad {
        match init_model(&spec, 0) {
            Err(Error::InvalidSpec(_) | Error::Layer { .. }) => {}
            other => panic!("{spec:?} gave {other:?}"),
        }
    }
}

#[test]
fn mismatched_parameters_are_rejected() {
    let spec = ModelSpec::mlp(3, &[4], 2);
    let model = init_model(&spec, 0).unwrap();
    let mut params = model.params().to_vec();
    let shape = params[0].shape().to_vec();
    params[0] = Tensor::zeros(vec![shape[1], shape[0]]);
    assert!(Model::from_params(spec.clone(), params).is_err());
    assert!(Model::from_params(spec, model.params()[..1].to_vec()).is_err());
}

#[test]
fn wrong_batch_shape_is_rejected() {
    let spec = small_spec(Arch::Dense, LossKind::SoftmaxCrossEntropy, Activation::Relu);
    let model = random_model(&spec, 0);
    let x = Tensor::zeros(vec![2, 6]);
    assert!(model.forward(&x).is_err());
    assert!(loss_and_grads(&model, &x, &[0, 1], LossKind::SoftmaxCrossEntropy, 0.0).is_err());
}
