use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    /// No nonlinearity. Output layers use this; softmax/sigmoid live in the loss.
    #[default]
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output `y = act(z)`.
    pub(crate) fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One layer of a sequential model.
///
/// Convolutions use stride 1 with "same" zero padding; average pooling uses a
/// stride equal to the pool size and drops any remainder rows/columns.
/// Image tensors are laid out height × width × channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        units: usize,
        #[serde(default)]
        activation: Activation,
    },
    Conv2d {
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        #[serde(default)]
        activation: Activation,
    },
    AvgPool2d {
        pool_h: usize,
        pool_w: usize,
    },
    Flatten,
    Embedding {
        vocab_size: usize,
        embed_dim: usize,
    },
    GlobalAvgPool1d,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::AvgPool2d { .. } => "avg_pool2d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Embedding { .. } => "embedding",
            LayerSpec::GlobalAvgPool1d => "global_avg_pool1d",
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            LayerSpec::Dense { activation, .. } | LayerSpec::Conv2d { activation, .. } => {
                *activation
            }
            _ => Activation::Identity,
        }
    }

    fn err(&self, layer: usize, msg: impl Into<String>) -> Error {
        Error::Layer {
            layer,
            kind: self.name(),
            msg: msg.into(),
        }
    }

    /// Per-example output shape for the given per-example input shape.
    pub(crate) fn output_shape(&self, layer: usize, input: &[usize]) -> Result<Vec<usize>> {
        let positive = |vals: &[usize]| vals.iter().all(|&v| v >= 1);
        match *self {
            LayerSpec::Dense { units, .. } => {
                if units == 0 {
                    return Err(self.err(layer, "units must be >= 1"));
                }
                if input.len() != 1 {
                    return Err(
                        self.err(layer, format!("expects a flat input, got shape {input:?}"))
                    );
                }
                Ok(vec![units])
            }
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                ..
            } => {
                if !positive(&[filters, kernel_h, kernel_w]) {
                    return Err(self.err(layer, "filters and kernel sizes must be >= 1"));
                }
                if input.len() != 3 {
                    return Err(self.err(
                        layer,
                        format!("expects [height, width, channels], got {input:?}"),
                    ));
                }
                Ok(vec![input[0], input[1], filters])
            }
            LayerSpec::AvgPool2d { pool_h, pool_w } => {
                if !positive(&[pool_h, pool_w]) {
                    return Err(self.err(layer, "pool sizes must be >= 1"));
                }
                if input.len() != 3 {
                    return Err(self.err(
                        layer,
                        format!("expects [height, width, channels], got {input:?}"),
                    ));
                }
                if input[0] < pool_h || input[1] < pool_w {
                    return Err(self.err(
                        layer,
                        format!("pool {pool_h}x{pool_w} larger than feature map {input:?}"),
                    ));
                }
                Ok(vec![input[0] / pool_h, input[1] / pool_w, input[2]])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Embedding {
                vocab_size,
                embed_dim,
            } => {
                if !positive(&[vocab_size, embed_dim]) {
                    return Err(self.err(layer, "vocab_size and embed_dim must be >= 1"));
                }
                if layer != 0 {
                    return Err(self.err(layer, "embedding must be the first layer"));
                }
                if input.len() != 1 {
                    return Err(self.err(layer, format!("expects a token sequence, got {input:?}")));
                }
                Ok(vec![input[0], embed_dim])
            }
            LayerSpec::GlobalAvgPool1d => {
                if input.len() != 2 {
                    return Err(
                        self.err(layer, format!("expects [steps, features], got {input:?}"))
                    );
                }
                Ok(vec![input[1]])
            }
        }
    }

    /// Shapes of this layer's parameter tensors, weights first.
    pub(crate) fn param_shapes(&self, input: &[usize]) -> Vec<(Vec<usize>, ParamKind)> {
        match *self {
            LayerSpec::Dense { units, .. } => vec![
                (vec![units, input[0]], ParamKind::Weight),
                (vec![units], ParamKind::Bias),
            ],
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                ..
            } => vec![
                (
                    vec![filters, kernel_h, kernel_w, input[2]],
                    ParamKind::Weight,
                ),
                (vec![filters], ParamKind::Bias),
            ],
            LayerSpec::Embedding {
                vocab_size,
                embed_dim,
            } => {
                vec![(vec![vocab_size, embed_dim], ParamKind::Embedding)]
            }
            _ => Vec::new(),
        }
    }
}

/// Role of a parameter tensor. Only `Weight` tensors carry the L2 penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    Embedding,
}

/// A sequential architecture: per-example input shape plus ordered layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Fully connected 784 → 10 → 20 → 10 network used for MNIST.
    pub fn mnist_fcnn() -> Self {
        ModelSpec {
            input_shape: vec![784],
            layers: vec![
                LayerSpec::Dense {
                    units: 10,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: 20,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: 10,
                    activation: Activation::Identity,
                },
            ],
        }
    }

    /// Three 3×3 conv blocks (32, 64, 128 filters), each followed by 2×2
    /// average pooling, then a 10-way dense classifier.
    pub fn cifar10_cnn() -> Self {
        let conv = |filters| LayerSpec::Conv2d {
            filters,
            kernel_h: 3,
            kernel_w: 3,
            activation: Activation::Relu,
        };
        let pool = || LayerSpec::AvgPool2d {
            pool_h: 2,
            pool_w: 2,
        };
        ModelSpec {
            input_shape: vec![32, 32, 3],
            layers: vec![
                conv(32),
                pool(),
                conv(64),
                pool(),
                conv(128),
                pool(),
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 10,
                    activation: Activation::Identity,
                },
            ],
        }
    }

    /// Embedding → global average pooling → single logit (sigmoid in the loss).
    pub fn text_classifier(vocab_size: usize, sequence_length: usize, embed_dim: usize) -> Self {
        ModelSpec {
            input_shape: vec![sequence_length],
            layers: vec![
                LayerSpec::Embedding {
                    vocab_size,
                    embed_dim,
                },
                LayerSpec::GlobalAvgPool1d,
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Identity,
                },
            ],
        }
    }

    /// ReLU multilayer perceptron with an identity output layer.
    pub fn mlp(input_dim: usize, hidden: &[usize], outputs: usize) -> Self {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&units| LayerSpec::Dense {
                units,
                activation: Activation::Relu,
            })
            .collect();
        layers.push(LayerSpec::Dense {
            units: outputs,
            activation: Activation::Identity,
        });
        ModelSpec {
            input_shape: vec![input_dim],
            layers,
        }
    }

    /// Per-layer (input shape, output shape), validating the whole stack.
    pub(crate) fn infer_shapes(&self) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "input shape {:?} must be non-empty with positive dimensions",
                self.input_shape
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidSpec("model has no layers".into()));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut current = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if let LayerSpec::GlobalAvgPool1d = layer {
                if i == 0 || !matches!(self.layers[i - 1], LayerSpec::Embedding { .. }) {
                    return Err(layer.err(i, "must directly follow an embedding layer"));
                }
            }
            let out = layer.output_shape(i, &current)?;
            shapes.push((current, out.clone()));
            current = out;
        }
        if current.len() != 1 {
            return Err(Error::InvalidSpec(format!(
                "model output must be flat, last layer produces {current:?}"
            )));
        }
        Ok(shapes)
    }

    pub fn output_dim(&self) -> Result<usize> {
        let shapes = self.infer_shapes()?;
        Ok(shapes.last().map(|(_, o)| o[0]).unwrap_or(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_of_cifar_image_feeds_dense_3072() {
        let spec = ModelSpec {
            input_shape: vec![32, 32, 3],
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 10,
                    activation: Activation::Identity,
                },
            ],
        };
        let shapes = spec.infer_shapes().unwrap();
        assert_eq!(shapes[1].0, vec![3072]);
        assert_eq!(
            spec.layers[1].param_shapes(&shapes[1].0)[0].0,
            vec![10, 3072]
        );
    }

    #[test]
    fn cnn_feature_map_flow() {
        let shapes = ModelSpec::cifar10_cnn().infer_shapes().unwrap();
        let outs: Vec<_> = shapes.iter().map(|(_, o)| o.clone()).collect();
        assert_eq!(outs[0], vec![32, 32, 32]);
        assert_eq!(outs[1], vec![16, 16, 32]);
        assert_eq!(outs[3], vec![8, 8, 64]);
        assert_eq!(outs[5], vec![4, 4, 128]);
        assert_eq!(outs[6], vec![2048]);
        assert_eq!(outs[7], vec![10]);
    }

    #[test]
    fn rejects_misplaced_layers() {
        let bad_embed = ModelSpec {
            input_shape: vec![5],
            layers: vec![
                LayerSpec::Dense {
                    units: 5,
                    activation: Activation::Relu,
                },
                LayerSpec::Embedding {
                    vocab_size: 10,
                    embed_dim: 4,
                },
            ],
        };
        match bad_embed.infer_shapes() {
            Err(Error::Layer { layer, kind, .. }) => {
                assert_eq!(layer, 1);
                assert_eq!(kind, "embedding");
            }
            other => panic!("expected layer error, got {other:?}"),
        }

        let bad_pool = ModelSpec {
            input_shape: vec![4, 4],
            layers: vec![LayerSpec::GlobalAvgPool1d],
        };
        assert!(bad_pool.infer_shapes().is_err());

        let unflattened = ModelSpec {
            input_shape: vec![4, 4, 1],
            layers: vec![LayerSpec::Dense {
                units: 2,
                activation: Activation::Identity,
            }],
        };
        assert!(matches!(
            unflattened.infer_shapes(),
            Err(Error::Layer { layer: 0, .. })
        ));

        let zero_units = ModelSpec::mlp(3, &[0], 2);
        assert!(zero_units.infer_shapes().is_err());
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let spec = ModelSpec::cifar10_cnn();
        let json = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);

        let typo =
            r#"{"input_shape":[4],"layers":[{"kind":"dense","units":2,"activaton":"relu"}]}"#;
        assert!(serde_json::from_str::<ModelSpec>(typo).is_err());
    }
}
