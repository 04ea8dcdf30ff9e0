//! Dense feed-forward networks with exact reverse-mode gradients, plus Adam and a
//! finite-difference gradient checker. Everything is `f64`.

mod adam;
mod gradcheck;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite gradient at parameter {0}")]
    NonFiniteGradient(usize),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
}

impl NnError {
    pub fn name(&self) -> &'static str {
        match self {
            NnError::DimensionMismatch { .. } => "DimensionMismatch",
            NnError::NonFiniteGradient(_) => "NonFiniteGradient",
            NnError::InvalidNetwork(_) => "InvalidNetwork",
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<(), NnError> {
    if expected == got {
        Ok(())
    } else {
        Err(NnError::DimensionMismatch { expected, got })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` by the activation derivative, expressed through the layer output.
    fn backward(self, output: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Tanh => grad.zip_mut_with(output, |g, &a| *g *= 1.0 - a * a),
            Activation::Relu => grad.zip_mut_with(output, |g, &a| {
                if a <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Identity => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[out × in]`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Intermediate activations of a batched forward pass: the input to every layer and the
/// final output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

/// Parameter gradients in layer order, same shapes as the weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRecord", into = "MlpRecord")]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `dims` has one more entry than `activations`.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if dims.len() != activations.len() + 1 || activations.is_empty() {
            return Err(NnError::InvalidNetwork(format!(
                "{} dims for {} layers",
                dims.len(),
                activations.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &activation)| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
                let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng));
                Layer { weight, bias: Array1::zeros(fan_out), activation }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::InvalidNetwork("no layers".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(NnError::InvalidNetwork(format!("layer {i}: bias length mismatch")));
            }
            if i > 0 && layers[i - 1].out_dim() != layer.in_dim() {
                return Err(NnError::InvalidNetwork(format!(
                    "layer {i}: input {} does not match previous output {}",
                    layer.in_dim(),
                    layers[i - 1].out_dim()
                )));
            }
            if layer.weight.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(NnError::InvalidNetwork(format!("layer {i}: non-finite parameter")));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache), NnError> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| NnError::InvalidNetwork(e.to_string()))?;
        let cache = self.forward_batch(x)?;
        Ok((cache.output().row(0).to_vec(), cache))
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<ForwardCache, NnError> {
        check_dim(self.input_dim(), input.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_owned());
        for layer in &self.layers {
            let mut z = activations.last().expect("input pushed").dot(&layer.weight.t());
            z += &layer.bias;
            layer.activation.apply(&mut z);
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        check_dim(self.input_dim(), input.ncols())?;
        let mut x = input.to_owned();
        for layer in &self.layers {
            let mut z = x.dot(&layer.weight.t());
            z += &layer.bias;
            layer.activation.apply(&mut z);
            x = z;
        }
        Ok(x)
    }

    /// Reverse-mode pass: returns parameter gradients (summed over the batch) and the
    /// gradient with respect to the batch input.
    pub fn backprop(
        &self,
        cache: &ForwardCache,
        output_gradient: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>), NnError> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(NnError::InvalidNetwork("cache from a different network".into()));
        }
        check_dim(self.output_dim(), output_gradient.ncols())?;
        check_dim(cache.batch_size(), output_gradient.nrows())?;
        let mut grad = output_gradient.to_owned();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            layer.activation.backward(&cache.activations[i + 1], &mut grad);
            let input = &cache.activations[i];
            let dw = grad.t().dot(input);
            let db = grad.sum_axis(Axis(0));
            grad = grad.dot(&layer.weight);
            layers.push((dw, db));
        }
        layers.reverse();
        Ok((Gradients { layers }, grad))
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        check_dim(self.param_count(), flat.len())?;
        let mut offset = 0;
        for layer in &mut self.layers {
            for w in layer.weight.iter_mut() {
                *w = flat[offset];
                offset += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerRecord {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MlpRecord {
    layers: Vec<LayerRecord>,
}

impl From<Mlp> for MlpRecord {
    fn from(mlp: Mlp) -> Self {
        MlpRecord {
            layers: mlp
                .layers
                .into_iter()
                .map(|l| LayerRecord {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    activation: l.activation,
                    weights: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = NnError;

    fn try_from(record: MlpRecord) -> Result<Self, Self::Error> {
        let layers = record
            .layers
            .into_iter()
            .map(|l| {
                let weight = Array2::from_shape_vec((l.out_dim, l.in_dim), l.weights)
                    .map_err(|e| NnError::InvalidNetwork(e.to_string()))?;
                Ok(Layer { weight, bias: Array1::from(l.bias), activation: l.activation })
            })
            .collect::<Result<Vec<_>, NnError>>()?;
        Mlp::from_layers(layers)
    }
}
