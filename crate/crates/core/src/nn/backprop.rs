//! Exact reverse-mode gradients for the sequential layer stack.
//!
//! A batched backward pass computes, for every layer, the gradient with
//! respect to its pre-activation output ("delta"). Parameter gradients are
//! then read off the deltas either summed over the batch or one example at a
//! time, which is what per-example clipping needs.

use std::collections::BTreeMap;

use super::gemm::{matmul, matmul_at};
use super::layers::{self, ConvGeom, PoolGeom};
use super::loss::LossKind;
use super::model::{token_index, ForwardCache, Model};
use super::spec::{LayerSpec, ParamKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameter gradients shaped like `Model::params`, plus the loss they
/// belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients {
            loss: 0.0,
            tensors: model
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect(),
        }
    }

    /// L2 norm over all parameter gradients concatenated.
    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .map(Tensor::sum_squares)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        self.check_congruent(other)?;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn check_congruent(&self, other: &Gradients) -> Result<()> {
        let same = self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.same_shape(b));
        if same {
            Ok(())
        } else {
            Err(Error::Shape("gradient sets have different shapes".into()))
        }
    }

    pub(crate) fn check_model(&self, model: &Model) -> Result<()> {
        let same = self.tensors.len() == model.params().len()
            && self
                .tensors
                .iter()
                .zip(model.params())
                .all(|(a, b)| a.same_shape(b));
        if same {
            Ok(())
        } else {
            Err(Error::Shape(
                "gradients do not match the model's parameters".into(),
            ))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.loss.is_finite() && self.tensors.iter().all(Tensor::all_finite)
    }

    pub(crate) fn add_pieces(&mut self, pieces: &[GradPiece], factor: f64) {
        for (t, piece) in self.tensors.iter_mut().zip(pieces) {
            piece.add_into(t.data_mut(), factor);
        }
    }

    pub(crate) fn from_pieces(model: &Model, loss: f64, pieces: &[GradPiece]) -> Self {
        let mut g = Gradients::zeros_like(model);
        g.loss = loss;
        g.add_pieces(pieces, 1.0);
        g
    }
}

/// One example's gradient for one parameter tensor. Embedding gradients
/// touch only the rows of tokens present in the example, so they are kept
/// sparse.
#[derive(Clone, Debug)]
pub(crate) enum GradPiece {
    Dense(Vec<f64>),
    Rows {
        width: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

impl GradPiece {
    pub fn sum_squares(&self) -> f64 {
        match self {
            GradPiece::Dense(v) => v.iter().map(|x| x * x).sum(),
            GradPiece::Rows { rows, .. } => rows.values().flatten().map(|x| x * x).sum(),
        }
    }

    pub fn add_into(&self, dst: &mut [f64], factor: f64) {
        match self {
            GradPiece::Dense(v) => {
                for (d, s) in dst.iter_mut().zip(v) {
                    *d += factor * s;
                }
            }
            GradPiece::Rows { width, rows } => {
                for (&r, vals) in rows {
                    for (d, s) in dst[r * width..(r + 1) * width].iter_mut().zip(vals) {
                        *d += factor * s;
                    }
                }
            }
        }
    }

    /// Adds `other` into `self` (same parameter tensor).
    pub fn merge(&mut self, other: &GradPiece) {
        match (self, other) {
            (GradPiece::Dense(a), GradPiece::Dense(b)) => {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
            (GradPiece::Rows { rows: a, .. }, GradPiece::Rows { rows: b, .. }) => {
                for (&r, vals) in b {
                    let dst = a.entry(r).or_insert_with(|| vec![0.0; vals.len()]);
                    dst.iter_mut().zip(vals).for_each(|(x, y)| *x += y);
                }
            }
            _ => unreachable!("pieces of one parameter share a representation"),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        match self {
            GradPiece::Dense(v) => v.iter_mut().for_each(|x| *x *= factor),
            GradPiece::Rows { rows, .. } => rows.values_mut().flatten().for_each(|x| *x *= factor),
        }
    }
}

/// `λ · Σ w²` over weight matrices and filters; biases and embedding tables
/// are not penalized.
pub fn l2_penalty(model: &Model, l2_lambda: f64) -> f64 {
    if l2_lambda == 0.0 {
        return 0.0;
    }
    let sum: f64 = model
        .params()
        .iter()
        .zip(model.param_kinds())
        .filter(|(_, k)| **k == ParamKind::Weight)
        .map(|(p, _)| p.sum_squares())
        .sum();
    l2_lambda * sum
}

/// Mean data loss over the batch plus the L2 penalty, with exact gradients of
/// that total. The penalty contributes `2λw` to each weight's gradient.
pub fn loss_and_grads(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    loss: LossKind,
    l2_lambda: f64,
) -> Result<Gradients> {
    if l2_lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "l2_lambda must be >= 0, got {l2_lambda}"
        )));
    }
    let n = model.check_batch(batch)?;
    let (mut grads, _) = batch_gradients(model, batch.data(), n, labels, loss)?;
    if l2_lambda > 0.0 {
        grads.loss += l2_penalty(model, l2_lambda);
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
    }
    Ok(grads)
}

/// One gradient per example (no penalty). Their mean equals the batch
/// gradient from [`loss_and_grads`] with `l2_lambda = 0`.
pub fn per_example_grads(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    loss: LossKind,
) -> Result<Vec<Gradients>> {
    let n = model.check_batch(batch)?;
    let mut out = Vec::with_capacity(n);
    for_each_example(model, batch.data(), n, labels, loss, |_, l, pieces| {
        out.push(Gradients::from_pieces(model, l, &pieces));
        Ok(())
    })?;
    Ok(out)
}

/// Fraction of correctly classified examples in a batch, from its logits.
fn count_correct(loss: LossKind, logits: &[f64], width: usize, labels: &[usize]) -> usize {
    loss.predict(logits, width)
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count()
}

fn check_labels(n: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyDataset("batch has no rows".into()));
    }
    Ok(())
}

/// Batch-mean gradient without penalty, plus the number of correct predictions.
pub(crate) fn batch_gradients(
    model: &Model,
    input: &[f64],
    n: usize,
    labels: &[usize],
    loss: LossKind,
) -> Result<(Gradients, usize)> {
    check_labels(n, labels)?;
    let cache = model.forward_cached(input, n, true)?;
    let width = model.output_dim();
    let (losses, dlogits) = loss.evaluate(cache.logits(), width, labels)?;
    let correct = count_correct(loss, cache.logits(), width, labels);
    let deltas = backward(model, &cache, dlogits);
    let inv = 1.0 / n as f64;
    let mut tensors = summed_param_grads(model, &cache, &deltas);
    for t in &mut tensors {
        t.data_mut().iter_mut().for_each(|v| *v *= inv);
    }
    let mean_loss = losses.iter().sum::<f64>() * inv;
    Ok((
        Gradients {
            loss: mean_loss,
            tensors,
        },
        correct,
    ))
}

/// Runs one batched forward/backward pass and hands each example's loss and
/// parameter-gradient pieces to `visit`, in row order. Returns the number of
/// correct predictions.
pub(crate) fn for_each_example<F>(
    model: &Model,
    input: &[f64],
    n: usize,
    labels: &[usize],
    loss: LossKind,
    mut visit: F,
) -> Result<usize>
where
    F: FnMut(usize, f64, Vec<GradPiece>) -> Result<()>,
{
    check_labels(n, labels)?;
    let cache = model.forward_cached(input, n, true)?;
    let width = model.output_dim();
    let (losses, dlogits) = loss.evaluate(cache.logits(), width, labels)?;
    let correct = count_correct(loss, cache.logits(), width, labels);
    let deltas = backward(model, &cache, dlogits);
    for (i, &l) in losses.iter().enumerate() {
        visit(i, l, example_param_grads(model, &cache, &deltas, i))?;
    }
    Ok(correct)
}

/// Per-layer deltas (gradient w.r.t. pre-activation output) for layers that
/// own parameters. `dlogits` is the per-example gradient of the loss.
fn backward(model: &Model, cache: &ForwardCache, dlogits: Vec<f64>) -> Vec<Option<Vec<f64>>> {
    let spec = model.spec();
    let plan = model.plan();
    let batch = cache.batch;
    let mut deltas: Vec<Option<Vec<f64>>> = vec![None; plan.len()];
    let mut grad = dlogits;
    for l in (0..plan.len()).rev() {
        let layer = &spec.layers[l];
        let lp = &plan[l];
        layers::activation_backward(&mut grad, &cache.acts[l + 1], layer.activation());
        let need_input_grad = l > 0;
        let params = &model.params()[lp.params.clone()];
        let next = match *layer {
            LayerSpec::Dense { units, .. } => {
                let dx = need_input_grad.then(|| {
                    let mut dx = vec![0.0; batch * lp.in_len()];
                    matmul(
                        &grad,
                        params[0].data(),
                        &mut dx,
                        batch,
                        units,
                        lp.in_len(),
                        false,
                    );
                    dx
                });
                deltas[l] = Some(grad);
                dx
            }
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                ..
            } => {
                let g = ConvGeom {
                    h: lp.input[0],
                    w: lp.input[1],
                    c: lp.input[2],
                    kh: kernel_h,
                    kw: kernel_w,
                };
                let dx = need_input_grad.then(|| {
                    let dcols = layers::conv_dcols(
                        &grad,
                        params[0].data(),
                        batch * g.positions(),
                        g.patch_len(),
                        filters,
                    );
                    layers::col2im(&dcols, batch, g)
                });
                deltas[l] = Some(grad);
                dx
            }
            LayerSpec::AvgPool2d { pool_h, pool_w } => Some(layers::avg_pool_backward(
                &grad,
                batch,
                PoolGeom {
                    h: lp.input[0],
                    w: lp.input[1],
                    c: lp.input[2],
                    ph: pool_h,
                    pw: pool_w,
                },
            )),
            LayerSpec::Flatten => Some(grad),
            LayerSpec::Embedding { .. } => {
                deltas[l] = Some(grad);
                None
            }
            LayerSpec::GlobalAvgPool1d => Some(layers::global_avg_pool_1d_backward(
                &grad,
                batch,
                lp.input[0],
                lp.input[1],
            )),
        };
        match next {
            Some(g) => grad = g,
            None => break,
        }
    }
    deltas
}

fn conv_geom(layer: &LayerSpec, input: &[usize]) -> Option<(ConvGeom, usize)> {
    match *layer {
        LayerSpec::Conv2d {
            filters,
            kernel_h,
            kernel_w,
            ..
        } => Some((
            ConvGeom {
                h: input[0],
                w: input[1],
                c: input[2],
                kh: kernel_h,
                kw: kernel_w,
            },
            filters,
        )),
        _ => None,
    }
}

fn summed_param_grads(
    model: &Model,
    cache: &ForwardCache,
    deltas: &[Option<Vec<f64>>],
) -> Vec<Tensor> {
    let batch = cache.batch;
    let mut out: Vec<Tensor> = model
        .params()
        .iter()
        .map(|p| Tensor::zeros(p.shape().to_vec()))
        .collect();
    for (l, (layer, lp)) in model.spec().layers.iter().zip(model.plan()).enumerate() {
        let Some(delta) = &deltas[l] else { continue };
        let r = lp.params.clone();
        match *layer {
            LayerSpec::Dense { units, .. } => {
                let (m, x) = (lp.in_len(), &cache.acts[l]);
                matmul_at(delta, x, out[r.start].data_mut(), units, batch, m, false);
                column_sums(delta, units, out[r.start + 1].data_mut());
            }
            LayerSpec::Conv2d { .. } => {
                let (g, filters) = conv_geom(layer, &lp.input).expect("conv layer");
                let cols = cache.cols[l]
                    .as_ref()
                    .expect("training forward keeps patches");
                let rows = batch * g.positions();
                matmul_at(
                    delta,
                    cols,
                    out[r.start].data_mut(),
                    filters,
                    rows,
                    g.patch_len(),
                    false,
                );
                column_sums(delta, filters, out[r.start + 1].data_mut());
            }
            LayerSpec::Embedding {
                vocab_size,
                embed_dim,
            } => {
                let table = out[r.start].data_mut();
                for (t, &tok) in cache.acts[0].iter().enumerate() {
                    let idx = token_index(tok, vocab_size).expect("validated in forward");
                    let src = &delta[t * embed_dim..(t + 1) * embed_dim];
                    for (d, s) in table[idx * embed_dim..(idx + 1) * embed_dim]
                        .iter_mut()
                        .zip(src)
                    {
                        *d += s;
                    }
                }
            }
            _ => {}
        }
    }
    out
}

fn example_param_grads(
    model: &Model,
    cache: &ForwardCache,
    deltas: &[Option<Vec<f64>>],
    i: usize,
) -> Vec<GradPiece> {
    let mut out = Vec::with_capacity(model.params().len());
    for (l, (layer, lp)) in model.spec().layers.iter().zip(model.plan()).enumerate() {
        let Some(delta) = &deltas[l] else { continue };
        match *layer {
            LayerSpec::Dense { units, .. } => {
                let m = lp.in_len();
                let d = &delta[i * units..(i + 1) * units];
                let x = &cache.acts[l][i * m..(i + 1) * m];
                let mut dw = Vec::with_capacity(units * m);
                for &dj in d {
                    dw.extend(x.iter().map(|&xk| dj * xk));
                }
                out.push(GradPiece::Dense(dw));
                out.push(GradPiece::Dense(d.to_vec()));
            }
            LayerSpec::Conv2d { .. } => {
                let (g, filters) = conv_geom(layer, &lp.input).expect("conv layer");
                let (hw, k) = (g.positions(), g.patch_len());
                let d = &delta[i * hw * filters..(i + 1) * hw * filters];
                let cols = &cache.cols[l]
                    .as_ref()
                    .expect("training forward keeps patches")[i * hw * k..(i + 1) * hw * k];
                let mut dw = vec![0.0; filters * k];
                matmul_at(d, cols, &mut dw, filters, hw, k, false);
                let mut db = vec![0.0; filters];
                column_sums(d, filters, &mut db);
                out.push(GradPiece::Dense(dw));
                out.push(GradPiece::Dense(db));
            }
            LayerSpec::Embedding {
                vocab_size,
                embed_dim,
            } => {
                let steps = lp.input[0];
                let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
                for t in 0..steps {
                    let tok = cache.acts[0][i * steps + t];
                    let idx = token_index(tok, vocab_size).expect("validated in forward");
                    let src = &delta[(i * steps + t) * embed_dim..][..embed_dim];
                    let dst = rows.entry(idx).or_insert_with(|| vec![0.0; embed_dim]);
                    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                }
                out.push(GradPiece::Rows {
                    width: embed_dim,
                    rows,
                });
            }
            _ => {}
        }
    }
    out
}

fn column_sums(m: &[f64], width: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for row in m.chunks_exact(width) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// `y = act(W x + b)` for a single vector `x: [m]` or a batch `x: [batch, m]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor, act: super::Activation) -> Result<Tensor> {
    let (batch, m) = match x.shape() {
        [m] => (1, *m),
        [batch, m] => (*batch, *m),
        s => {
            return Err(Error::Shape(format!(
                "dense input must be rank 1 or 2, got {s:?}"
            )))
        }
    };
    let n = match w.shape() {
        [n, cols] if *cols == m => *n,
        s => {
            return Err(Error::Shape(format!(
                "weight shape {s:?} incompatible with input width {m}"
            )))
        }
    };
    if b.shape() != [n] {
        return Err(Error::Shape(format!(
            "bias shape {:?}, expected [{n}]",
            b.shape()
        )));
    }
    let y = layers::dense(x.data(), w.data(), b.data(), batch, m, n, act);
    let shape = if x.shape().len() == 1 {
        vec![n]
    } else {
        vec![batch, n]
    };
    Tensor::new(shape, y)
}
