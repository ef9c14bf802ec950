use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{axpy, dot, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => relu(z),
            Activation::Sigmoid => sigmoid(z),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Relu => relu_grad(out),
            Activation::Sigmoid => out * (1.0 - out),
            Activation::Linear => 1.0,
        }
    }
}

pub fn relu(z: f64) -> f64 {
    z.max(0.0)
}

/// Subgradient of ReLU, 0 at the kink.
pub fn relu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Architecture description of one layer, without parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d { filters: usize, kernel: usize },
    Relu,
    MaxPool1d { pool: usize, stride: usize },
    Flatten,
    Dense { units: usize, activation: Activation },
    Dropout { rate: f64 },
}

/// Weights drawn from `N(0, sqrt(2 / fan_in))`.
pub fn he_initialize(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::Parameter("He initialization needs fan_in >= 1".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::Parameter(e.to_string()))?;
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, data)
}

/// Stride-1, unpadded cross-correlation with `filters` output channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    /// Shape `(filters, in_channels, kernel)`.
    pub kernels: Tensor,
    pub biases: Vec<f64>,
}

impl Conv1d {
    pub fn new(kernels: Tensor, biases: Vec<f64>) -> Result<Self> {
        let s = kernels.shape();
        if s.len() != 3 || s[2] == 0 || s[0] != biases.len() {
            return Err(Error::Shape(format!(
                "conv kernels {s:?} with {} biases",
                biases.len()
            )));
        }
        Ok(Conv1d { kernels, biases })
    }

    pub fn filters(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_len(&self) -> usize {
        self.kernels.shape()[2]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            [c, l] if *c == self.in_channels() && *l >= self.kernel_len() => {
                Ok(vec![self.filters(), l - self.kernel_len() + 1])
            }
            _ => Err(Error::Shape(format!(
                "conv1d expects ({}, >= {}) input, got {input:?}",
                self.in_channels(),
                self.kernel_len()
            ))),
        }
    }

    /// `z_j[t] = sum_c sum_tau x_c[t + tau] * k_jc[tau] + b_j`, summed in
    /// `c`-major, `tau`-minor order with the bias added last.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let (channels, len) = (input.shape()[0], input.shape()[1]);
        let (filters, k, out_len) = (self.filters(), self.kernel_len(), out_shape[1]);
        let x = input.data();
        let w = self.kernels.data();
        let mut out = vec![0.0; filters * out_len];
        for m in 0..filters {
            let row = &mut out[m * out_len..(m + 1) * out_len];
            for c in 0..channels {
                let xc = &x[c * len..(c + 1) * len];
                let wmc = &w[(m * channels + c) * k..(m * channels + c + 1) * k];
                for (tau, &weight) in wmc.iter().enumerate() {
                    axpy(weight, &xc[tau..tau + out_len], row);
                }
            }
            let b = self.biases[m];
            row.iter_mut().for_each(|v| *v += b);
        }
        Tensor::new(out_shape, out)
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the input when `need_input_grad` is set.
    pub fn backward(
        &self,
        input: &Tensor,
        delta: &Tensor,
        grad: &mut ParamGrad,
        need_input_grad: bool,
    ) -> Option<Tensor> {
        let (channels, len) = (input.shape()[0], input.shape()[1]);
        let (filters, k) = (self.filters(), self.kernel_len());
        let out_len = delta.shape()[1];
        let x = input.data();
        let d = delta.data();
        let w = self.kernels.data();
        for m in 0..filters {
            let dm = &d[m * out_len..(m + 1) * out_len];
            grad.bias[m] += dm.iter().sum::<f64>();
            for c in 0..channels {
                let xc = &x[c * len..(c + 1) * len];
                let base = (m * channels + c) * k;
                for tau in 0..k {
                    grad.weights[base + tau] += dot(dm, &xc[tau..tau + out_len]);
                }
            }
        }
        if !need_input_grad {
            return None;
        }
        let mut dx = vec![0.0; channels * len];
        for m in 0..filters {
            let dm = &d[m * out_len..(m + 1) * out_len];
            for c in 0..channels {
                let wmc = &w[(m * channels + c) * k..(m * channels + c + 1) * k];
                let dxc = &mut dx[c * len..(c + 1) * len];
                for (tau, &weight) in wmc.iter().enumerate() {
                    axpy(weight, dm, &mut dxc[tau..tau + out_len]);
                }
            }
        }
        Some(Tensor::new(input.shape().to_vec(), dx).expect("input shape"))
    }
}

/// Non-overlapping-by-default max pooling along time, per channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxPool1d {
    pub pool: usize,
    pub stride: usize,
}

impl Default for MaxPool1d {
    fn default() -> Self {
        MaxPool1d { pool: 2, stride: 2 }
    }
}

impl MaxPool1d {
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            [c, l] if *l >= self.pool && self.pool >= 1 && self.stride >= 1 => {
                Ok(vec![*c, (l - self.pool) / self.stride + 1])
            }
            _ => Err(Error::Shape(format!(
                "max pool {} needs (channels, >= {}) input, got {input:?}",
                self.pool, self.pool
            ))),
        }
    }

    /// Returns pooled values and the flat input index of each maximum. Ties
    /// go to the lowest index; a trailing remainder is dropped.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let out_shape = self.output_shape(input.shape())?;
        let (channels, len) = (input.shape()[0], input.shape()[1]);
        let out_len = out_shape[1];
        let x = input.data();
        let mut out = Vec::with_capacity(channels * out_len);
        let mut argmax = Vec::with_capacity(channels * out_len);
        for c in 0..channels {
            for o in 0..out_len {
                let start = c * len + o * self.stride;
                let mut best = start;
                for i in start + 1..start + self.pool {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
        Ok((Tensor::new(out_shape, out)?, argmax))
    }

    pub fn backward(input_shape: &[usize], delta: &Tensor, argmax: &[usize]) -> Tensor {
        let mut dx = Tensor::zeros(input_shape.to_vec());
        let data = dx.data_mut();
        for (&i, &g) in argmax.iter().zip(delta.data()) {
            data[i] += g;
        }
        dx
    }
}

/// Fully connected layer, weights shaped `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Tensor,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weights: Tensor, biases: Vec<f64>, activation: Activation) -> Result<Self> {
        let s = weights.shape();
        if s.len() != 2 || s[0] != biases.len() {
            return Err(Error::Shape(format!(
                "dense weights {s:?} with {} biases",
                biases.len()
            )));
        }
        Ok(Dense {
            weights,
            biases,
            activation,
        })
    }

    pub fn units(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            [n] if *n == self.inputs() => Ok(vec![self.units()]),
            _ => Err(Error::Shape(format!(
                "dense expects ({},) input, got {input:?}",
                self.inputs()
            ))),
        }
    }

    pub fn pre_activation(&self, input: &Tensor) -> Result<Vec<f64>> {
        self.output_shape(input.shape())?;
        let n_in = self.inputs();
        let w = self.weights.data();
        Ok((0..self.units())
            .map(|o| dot(&w[o * n_in..(o + 1) * n_in], input.data()) + self.biases[o])
            .collect())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let z = self.pre_activation(input)?;
        let out: Vec<f64> = z.into_iter().map(|v| self.activation.apply(v)).collect();
        Tensor::new(vec![self.units()], out)
    }

    /// `delta_z` is the gradient with respect to the pre-activation.
    pub fn backward(
        &self,
        input: &Tensor,
        delta_z: &[f64],
        grad: &mut ParamGrad,
        need_input_grad: bool,
    ) -> Option<Tensor> {
        let n_in = self.inputs();
        let x = input.data();
        for (o, &d) in delta_z.iter().enumerate() {
            grad.bias[o] += d;
            axpy(d, x, &mut grad.weights[o * n_in..(o + 1) * n_in]);
        }
        if !need_input_grad {
            return None;
        }
        let w = self.weights.data();
        let mut dx = vec![0.0; n_in];
        for (o, &d) in delta_z.iter().enumerate() {
            axpy(d, &w[o * n_in..(o + 1) * n_in], &mut dx);
        }
        Some(Tensor::new(vec![n_in], dx).expect("dense input shape"))
    }
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - rate)` during
/// training so inference is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn mask(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let keep = 1.0 - self.rate;
        (0..len)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// A layer with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv1d(Conv1d),
    Relu,
    MaxPool1d(MaxPool1d),
    Flatten,
    Dense(Dense),
    Dropout(Dropout),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "conv1d",
            Layer::Relu => "relu",
            Layer::MaxPool1d(_) => "max_pool1d",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Dropout(_) => "dropout",
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv1d(c) => c.output_shape(input),
            Layer::MaxPool1d(p) => p.output_shape(input),
            Layer::Dense(d) => d.output_shape(input),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Relu | Layer::Dropout(_) => Ok(input.to_vec()),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv1d(c) => c.kernels.len() + c.biases.len(),
            Layer::Dense(d) => d.weights.len() + d.biases.len(),
            _ => 0,
        }
    }

    /// Build the layer for a given input shape with He-initialized weights
    /// and zero biases.
    pub fn init(spec: &LayerSpec, input: &[usize], rng: &mut ChaCha8Rng) -> Result<Layer> {
        Ok(match *spec {
            LayerSpec::Conv1d { filters, kernel } => {
                let [channels, _] = input else {
                    return Err(Error::Shape(format!(
                        "conv1d needs (channels, length) input, got {input:?}"
                    )));
                };
                if filters == 0 || kernel == 0 {
                    return Err(Error::Parameter("conv1d filters and kernel must be >= 1".into()));
                }
                let kernels = he_initialize(vec![filters, *channels, kernel], channels * kernel, rng)?;
                Layer::Conv1d(Conv1d::new(kernels, vec![0.0; filters])?)
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool1d { pool, stride } => Layer::MaxPool1d(MaxPool1d { pool, stride }),
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Dense { units, activation } => {
                let [n_in] = input else {
                    return Err(Error::Shape(format!(
                        "dense needs flat input, got {input:?} (missing flatten?)"
                    )));
                };
                if units == 0 {
                    return Err(Error::Parameter("dense units must be >= 1".into()));
                }
                let weights = he_initialize(vec![units, *n_in], *n_in, rng)?;
                Layer::Dense(Dense::new(weights, vec![0.0; units], activation)?)
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Parameter(format!("dropout rate {rate} not in [0, 1)")));
                }
                Layer::Dropout(Dropout { rate })
            }
        })
    }
}

/// Gradient buffers for one parametric layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros_like(layer: &Layer) -> Option<ParamGrad> {
        match layer {
            Layer::Conv1d(c) => Some(ParamGrad {
                weights: vec![0.0; c.kernels.len()],
                bias: vec![0.0; c.biases.len()],
            }),
            Layer::Dense(d) => Some(ParamGrad {
                weights: vec![0.0; d.weights.len()],
                bias: vec![0.0; d.biases.len()],
            }),
            _ => None,
        }
    }
}
