use std::ops::Range;

use rand::Rng as _;

use super::layers::{self, ConvGeom, PoolGeom};
use super::spec::{LayerSpec, ModelSpec, ParamKind};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LayerPlan {
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub params: Range<usize>,
}

impl LayerPlan {
    pub fn in_len(&self) -> usize {
        self.input.iter().product()
    }
    pub fn out_len(&self) -> usize {
        self.output.iter().product()
    }
}

/// A sequential network: its architecture and instantiated parameters.
///
/// Parameters are stored per layer in order, weights before biases.
/// Shapes are validated against the spec when the model is built, so a model
/// that exists can always run a correctly shaped batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Tensor>,
    kinds: Vec<ParamKind>,
    plan: Vec<LayerPlan>,
}

/// Parameter shapes in layer order, each with its kind.
type ParamLayout = Vec<(Vec<usize>, ParamKind)>;

fn build_plan(spec: &ModelSpec) -> Result<(Vec<LayerPlan>, ParamLayout)> {
    let shapes = spec.infer_shapes()?;
    let mut plan = Vec::with_capacity(shapes.len());
    let mut all = Vec::new();
    for (layer, (input, output)) in spec.layers.iter().zip(shapes) {
        let ps = layer.param_shapes(&input);
        let start = all.len();
        all.extend(ps);
        plan.push(LayerPlan {
            input,
            output,
            params: start..all.len(),
        });
    }
    Ok((plan, all))
}

/// Builds a model with Glorot-uniform weights and zero biases.
///
/// Weights are drawn from `ChaCha8Rng::seed_from_u64(seed)` in layer order.
/// Conv fan-in/fan-out count the receptive field (`kh·kw·channels`,
/// `kh·kw·filters`). Embedding row 0 (padding) starts at zero.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    let (plan, shapes) = build_plan(spec)?;
    let mut rng = rng_from_seed(seed);
    let mut params = Vec::with_capacity(shapes.len());
    let mut kinds = Vec::with_capacity(shapes.len());
    for (layer, lp) in spec.layers.iter().zip(&plan) {
        for (shape, kind) in &shapes[lp.params.clone()] {
            let n: usize = shape.iter().product();
            let data = match kind {
                ParamKind::Bias => vec![0.0; n],
                ParamKind::Weight | ParamKind::Embedding => {
                    let (fan_in, fan_out) = match *layer {
                        LayerSpec::Conv2d {
                            filters,
                            kernel_h,
                            kernel_w,
                            ..
                        } => {
                            let rf = kernel_h * kernel_w;
                            (rf * lp.input[2], rf * filters)
                        }
                        _ => (shape[1], shape[0]),
                    };
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let mut d: Vec<f64> = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
                    if *kind == ParamKind::Embedding {
                        d[..shape[1]].iter_mut().for_each(|v| *v = 0.0);
                    }
                    d
                }
            };
            params.push(Tensor::from_parts(shape.clone(), data));
            kinds.push(*kind);
        }
    }
    Ok(Model {
        spec: spec.clone(),
        params,
        kinds,
        plan,
    })
}

/// Activations recorded by a forward pass, consumed by backpropagation.
pub(crate) struct ForwardCache {
    pub batch: usize,
    /// `acts[0]` is the input batch; `acts[l + 1]` is layer `l`'s output.
    pub acts: Vec<Vec<f64>>,
    /// im2col patches for convolution layers.
    pub cols: Vec<Option<Vec<f64>>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().expect("at least one layer")
    }
}

impl Model {
    /// Rebuilds a model from a spec and explicit parameters, checking shapes.
    pub fn from_params(spec: ModelSpec, params: Vec<Tensor>) -> Result<Model> {
        let (plan, shapes) = build_plan(&spec)?;
        if shapes.len() != params.len() {
            return Err(Error::Shape(format!(
                "spec needs {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, ((shape, _), p)) in shapes.iter().zip(&params).enumerate() {
            if p.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "parameter {i}: expected shape {shape:?}, got {:?}",
                    p.shape()
                )));
            }
        }
        let kinds = shapes.into_iter().map(|(_, k)| k).collect();
        Ok(Model {
            spec,
            params,
            kinds,
            plan,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_kinds(&self) -> &[ParamKind] {
        &self.kinds
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    pub fn output_dim(&self) -> usize {
        self.plan.last().map(|p| p.out_len()).unwrap_or(0)
    }

    pub(crate) fn plan(&self) -> &[LayerPlan] {
        &self.plan
    }

    pub(crate) fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let shape = batch.shape();
        if shape.len() != self.spec.input_shape.len() + 1 || shape[1..] != self.spec.input_shape[..]
        {
            return Err(Error::Layer {
                layer: 0,
                kind: self.spec.layers[0].name(),
                msg: format!(
                    "batch shape {shape:?} does not match [batch, {:?}]",
                    self.spec.input_shape
                ),
            });
        }
        Ok(shape[0])
    }

    /// Pre-loss logits `[batch, outputs]`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let n = self.check_batch(batch)?;
        let cache = self.forward_cached(batch.data(), n, false)?;
        let out = cache.acts.into_iter().last().unwrap_or_default();
        Ok(Tensor::from_parts(vec![n, self.output_dim()], out))
    }

    /// Logits computed in chunks of `chunk` rows to bound memory.
    pub fn forward_chunked(&self, batch: &Tensor, chunk: usize) -> Result<Tensor> {
        let n = self.check_batch(batch)?;
        let width = batch.row_len();
        let mut out = Vec::with_capacity(n * self.output_dim());
        for start in (0..n).step_by(chunk.max(1)) {
            let end = (start + chunk.max(1)).min(n);
            let cache = self.forward_cached(
                &batch.data()[start * width..end * width],
                end - start,
                false,
            )?;
            out.extend_from_slice(cache.logits());
        }
        Ok(Tensor::from_parts(vec![n, self.output_dim()], out))
    }

    pub(crate) fn forward_cached(
        &self,
        input: &[f64],
        batch: usize,
        keep_cols: bool,
    ) -> Result<ForwardCache> {
        let mut acts = Vec::with_capacity(self.plan.len() + 1);
        let mut cols = Vec::with_capacity(self.plan.len());
        acts.push(input.to_vec());
        for (l, (layer, lp)) in self.spec.layers.iter().zip(&self.plan).enumerate() {
            let x = &acts[l];
            let p = &self.params[lp.params.clone()];
            let mut layer_cols = None;
            let y = match *layer {
                LayerSpec::Dense { units, activation } => layers::dense(
                    x,
                    p[0].data(),
                    p[1].data(),
                    batch,
                    lp.in_len(),
                    units,
                    activation,
                ),
                LayerSpec::Conv2d {
                    filters,
                    kernel_h,
                    kernel_w,
                    activation,
                } => {
                    let g = ConvGeom {
                        h: lp.input[0],
                        w: lp.input[1],
                        c: lp.input[2],
                        kh: kernel_h,
                        kw: kernel_w,
                    };
                    let c = layers::im2col(x, batch, g);
                    let y = layers::conv_from_cols(
                        &c,
                        p[0].data(),
                        p[1].data(),
                        batch * g.positions(),
                        g.patch_len(),
                        filters,
                        activation,
                    );
                    if keep_cols {
                        layer_cols = Some(c);
                    }
                    y
                }
                LayerSpec::AvgPool2d { pool_h, pool_w } => layers::avg_pool(
                    x,
                    batch,
                    PoolGeom {
                        h: lp.input[0],
                        w: lp.input[1],
                        c: lp.input[2],
                        ph: pool_h,
                        pw: pool_w,
                    },
                ),
                LayerSpec::Flatten => x.clone(),
                LayerSpec::Embedding {
                    vocab_size,
                    embed_dim,
                } => {
                    let table = p[0].data();
                    let mut y = Vec::with_capacity(x.len() * embed_dim);
                    for (i, &tok) in x.iter().enumerate() {
                        let idx = token_index(tok, vocab_size).ok_or_else(|| Error::Layer {
                            layer: l,
                            kind: layer.name(),
                            msg: format!(
                                "token {tok} at flat position {i} outside 0..{vocab_size}"
                            ),
                        })?;
                        y.extend_from_slice(&table[idx * embed_dim..(idx + 1) * embed_dim]);
                    }
                    y
                }
                LayerSpec::GlobalAvgPool1d => {
                    layers::global_avg_pool_1d(x, batch, lp.input[0], lp.input[1])
                }
            };
            cols.push(layer_cols);
            acts.push(y);
        }
        if let Some(pos) = acts
            .last()
            .and_then(|a| a.iter().position(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite(format!("logit at flat index {pos}")));
        }
        Ok(ForwardCache { batch, acts, cols })
    }
}

pub(crate) fn token_index(tok: f64, vocab: usize) -> Option<usize> {
    (tok >= 0.0 && tok.fract() == 0.0 && tok < vocab as f64).then_some(tok as usize)
}
