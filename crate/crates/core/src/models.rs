//! Small feedforward classifiers: exact forward evaluation, hand-written
//! reverse accumulation for input gradients, and the JSON model format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{check_len, Error, Result};
use crate::numerics::{ensure_finite, Mat};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `out = weights · in + bias`, weights are `out_dim × in_dim`.
    Linear { weights: Mat, bias: Vec<f64> },
    Relu,
    Sigmoid,
    Tanh,
}

impl Layer {
    pub fn is_activation(&self) -> bool {
        !matches!(self, Layer::Linear { .. })
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        match self {
            Layer::Linear { weights, bias } => {
                let mut out = weights.mul_vec(input);
                for (o, b) in out.iter_mut().zip(bias) {
                    *o += b;
                }
                out
            }
            Layer::Relu => input.iter().map(|&x| x.max(0.0)).collect(),
            Layer::Sigmoid => input.iter().map(|&x| sigmoid(x)).collect(),
            Layer::Tanh => input.iter().map(|&x| x.tanh()).collect(),
        }
    }

    /// Pulls a cotangent on this layer's output back to its input.
    fn backward(&self, input: &[f64], output: &[f64], cot: &[f64]) -> Vec<f64> {
        match self {
            Layer::Linear { weights, .. } => weights.tr_mul_vec(cot),
            // derivative at 0 is taken as 0
            Layer::Relu => input
                .iter()
                .zip(cot)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
            Layer::Sigmoid => output
                .iter()
                .zip(cot)
                .map(|(&s, &g)| g * s * (1.0 - s))
                .collect(),
            Layer::Tanh => output
                .iter()
                .zip(cot)
                .map(|(&t, &g)| g * (1.0 - t * t))
                .collect(),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// An immutable feedforward classifier producing `num_classes` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_dim: usize,
    num_classes: usize,
    layers: Vec<Layer>,
}

impl Model {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("model input_dim must be at least 1"));
        }
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if let Layer::Linear { weights, bias } = layer {
                if weights.cols() != width {
                    return Err(Error::Parse {
                        location: format!("layer {i}"),
                        message: format!(
                            "weights have {} columns but the incoming width is {width}",
                            weights.cols()
                        ),
                    });
                }
                if bias.len() != weights.rows() {
                    return Err(Error::Parse {
                        location: format!("layer {i}"),
                        message: format!(
                            "bias length {} does not match {} output units",
                            bias.len(),
                            weights.rows()
                        ),
                    });
                }
                ensure_finite(&format!("layer {i} bias"), bias)?;
                width = weights.rows();
            }
        }
        if width < 2 {
            return Err(Error::invalid(format!(
                "model must produce at least 2 logits, got {width}"
            )));
        }
        Ok(Self {
            input_dim,
            num_classes: width,
            layers,
        })
    }

    /// Single affine layer `W x + b`.
    pub fn linear(weights: Mat, bias: Vec<f64>) -> Result<Self> {
        Self::new(weights.cols(), vec![Layer::Linear { weights, bias }])
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Structural check: exactly one linear layer and no activations.
    pub fn is_globally_linear(&self) -> bool {
        matches!(self.layers.as_slice(), [Layer::Linear { .. }])
    }

    /// `(W, b)` when the model is globally linear.
    pub fn affine_parts(&self) -> Option<(&Mat, &[f64])> {
        match self.layers.as_slice() {
            [Layer::Linear { weights, bias }] => Some((weights, bias.as_slice())),
            _ => None,
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("model input", input.len(), self.input_dim)?;
        Ok(self.forward_unchecked(input))
    }

    pub(crate) fn forward_unchecked(&self, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer.forward(&x);
        }
        x
    }

    /// Returns `Jᵀ c` where `J` is the Jacobian of the logits with respect
    /// to the input, evaluated at `input`.
    pub fn input_gradient(&self, input: &[f64], logit_cotangent: &[f64]) -> Result<Vec<f64>> {
        check_len("model input", input.len(), self.input_dim)?;
        check_len("logit cotangent", logit_cotangent.len(), self.num_classes)?;
        Ok(self.forward_and_gradient(input, |_| logit_cotangent.to_vec()).1)
    }

    /// Forward pass, then a backward pass seeded with the cotangent that
    /// `cotangent_of` computes from the logits. Returns `(logits, gradient)`.
    pub(crate) fn forward_and_gradient(
        &self,
        input: &[f64],
        cotangent_of: impl FnOnce(&[f64]) -> Vec<f64>,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("non-empty"));
            acts.push(next);
        }
        let logits = acts.last().expect("non-empty").clone();
        let mut cot = cotangent_of(&logits);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            cot = layer.backward(&acts[i], &acts[i + 1], &cot);
        }
        (logits, cot)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum LayerRecord {
    Linear {
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRecord<L> {
    input_dim: usize,
    layers: Vec<L>,
}

impl Model {
    pub fn to_json(&self) -> String {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Linear { weights, bias } => LayerRecord::Linear {
                    weights: weights.to_rows(),
                    bias: bias.clone(),
                },
                Layer::Relu => LayerRecord::Relu,
                Layer::Sigmoid => LayerRecord::Sigmoid,
                Layer::Tanh => LayerRecord::Tanh,
            })
            .collect();
        let rec = ModelRecord {
            input_dim: self.input_dim,
            layers,
        };
        serde_json::to_string_pretty(&rec).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: ModelRecord<Value> = serde_json::from_str(text).map_err(|e| Error::Parse {
            location: "model".into(),
            message: e.to_string(),
        })?;
        let mut layers = Vec::with_capacity(rec.layers.len());
        for (i, v) in rec.layers.into_iter().enumerate() {
            let parsed: LayerRecord = serde_json::from_value(v).map_err(|e| Error::Parse {
                location: format!("layer {i}"),
                message: e.to_string(),
            })?;
            layers.push(match parsed {
                LayerRecord::Linear { weights, bias } => {
                    let weights = Mat::from_rows(&weights).map_err(|e| Error::Parse {
                        location: format!("layer {i}"),
                        message: e.to_string(),
                    })?;
                    Layer::Linear { weights, bias }
                }
                LayerRecord::Relu => Layer::Relu,
                LayerRecord::Sigmoid => Layer::Sigmoid,
                LayerRecord::Tanh => Layer::Tanh,
            });
        }
        Model::new(rec.input_dim, layers)
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Model::from_json(&text)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_json()).map_err(|e| Error::io(path, e))
}
