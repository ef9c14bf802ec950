use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Layer, LayerSpec, MaxPool1d, ParamGrad};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Smallest and largest probability fed to a logarithm.
pub const PROB_CLIP: f64 = 1e-15;

/// Binary cross-entropy of one prediction, with `p` clipped to
/// `[1e-15, 1 - 1e-15]`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// A feed-forward stack ending in one sigmoid unit that outputs P(case).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

/// Activations recorded by a training-mode forward pass, consumed by
/// [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `activations[0]` is the input; `activations[i + 1]` is layer `i`'s output.
    activations: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
    masks: Vec<Option<Vec<f64>>>,
}

impl ForwardPass {
    pub fn output(&self) -> f64 {
        self.activations.last().expect("non-empty pass").data()[0]
    }
}

/// Parameter gradients, one entry per layer (`None` for parameter-free layers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrad>>,
}

impl Gradients {
    pub fn zeros_for(network: &Network) -> Self {
        Gradients {
            layers: network.layers.iter().map(ParamGrad::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
                a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.layers.iter_mut().flatten() {
            g.weights.iter_mut().for_each(|x| *x *= factor);
            g.bias.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Flat views in the same order as [`Network::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|g| [g.weights.as_slice(), g.bias.as_slice()])
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl Network {
    /// Initialize a network for inputs of `input_shape` (channels, length)
    /// or (length,) for dense-only stacks.
    pub fn init(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let layer = Layer::init(spec, &shape, &mut rng).map_err(|e| at_layer(i, e))?;
            shape = layer.output_shape(&shape).map_err(|e| at_layer(i, e))?;
            layers.push(layer);
        }
        Network::from_layers(input_shape.to_vec(), layers)
    }

    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.output_shape(&shape).map_err(|e| at_layer(i, e))?;
        }
        match layers.last() {
            Some(Layer::Dense(d)) if d.units() == 1 && d.activation == Activation::Sigmoid => {}
            _ => {
                return Err(Error::Shape(
                    "network must end in a single sigmoid dense unit".into(),
                ))
            }
        }
        Ok(Network {
            input_shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Output shape after each layer.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        self.layers
            .iter()
            .map(|l| {
                shape = l.output_shape(&shape).expect("validated at construction");
                shape.clone()
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Mutable parameter views: weights then biases, per parametric layer.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv1d(c) => {
                    out.push(c.kernels.data_mut());
                    out.push(c.biases.as_mut_slice());
                }
                Layer::Dense(d) => {
                    out.push(d.weights.data_mut());
                    out.push(d.biases.as_mut_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv1d(c) => {
                    out.push(c.kernels.data());
                    out.push(c.biases.as_slice());
                }
                Layer::Dense(d) => {
                    out.push(d.weights.data());
                    out.push(d.biases.as_slice());
                }
                _ => {}
            }
        }
        out
    }

    fn input_tensor(&self, input: &[f64]) -> Result<Tensor> {
        if input.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "input of length {} does not match network input {:?}",
                input.len(),
                self.input_shape
            )));
        }
        Tensor::new(self.input_shape.clone(), input.to_vec())
    }

    /// Inference-mode probability of case. Dropout is the identity.
    pub fn predict(&self, input: &[f64]) -> Result<f64> {
        let mut x = self.input_tensor(input)?;
        for (i, layer) in self.layers.iter().enumerate() {
            x = match layer {
                Layer::Conv1d(c) => c.forward(&x),
                Layer::Relu => Ok(x.map(super::layers::relu)),
                Layer::MaxPool1d(p) => p.forward(&x).map(|(y, _)| y),
                Layer::Flatten => {
                    let n = x.len();
                    x.reshape(vec![n])
                }
                Layer::Dense(d) => d.forward(&x),
                Layer::Dropout(_) => Ok(x),
            }
            .map_err(|e| at_layer(i, e))?;
        }
        Ok(x.data()[0])
    }

    /// Training-mode forward pass. Dropout masks are drawn from `rng`; with
    /// `rng = None` dropout is disabled.
    pub fn forward_train(&self, input: &[f64], mut rng: Option<&mut ChaCha8Rng>) -> Result<ForwardPass> {
        let n = self.layers.len();
        let mut activations = Vec::with_capacity(n + 1);
        let mut argmax = vec![None; n];
        let mut masks = vec![None; n];
        activations.push(self.input_tensor(input)?);
        for (i, layer) in self.layers.iter().enumerate() {
            let x = &activations[i];
            let y = match layer {
                Layer::Conv1d(c) => c.forward(x),
                Layer::Relu => Ok(x.map(super::layers::relu)),
                Layer::MaxPool1d(p) => p.forward(x).map(|(y, idx)| {
                    argmax[i] = Some(idx);
                    y
                }),
                Layer::Flatten => x.clone().reshape(vec![x.len()]),
                Layer::Dense(d) => d.forward(x),
                Layer::Dropout(d) => match rng.as_deref_mut() {
                    Some(r) if d.rate > 0.0 => {
                        let mask = d.mask(x.len(), r);
                        let mut y = x.clone();
                        y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                        masks[i] = Some(mask);
                        Ok(y)
                    }
                    _ => Ok(x.clone()),
                },
            }
            .map_err(|e| at_layer(i, e))?;
            activations.push(y);
        }
        Ok(ForwardPass {
            activations,
            argmax,
            masks,
        })
    }

    /// Exact gradients of the binary cross-entropy of `pass` against `target`.
    pub fn backward(&self, pass: &ForwardPass, target: f64) -> Gradients {
        let mut grads = Gradients::zeros_for(self);
        let n = self.layers.len();
        // sigmoid + BCE: dL/dz = p - y at the output unit
        let mut delta = Tensor::new(vec![1], vec![pass.output() - target]).expect("scalar");
        for i in (0..n).rev() {
            let input = &pass.activations[i];
            let output = &pass.activations[i + 1];
            let need_input_grad = i > 0;
            let next = match &self.layers[i] {
                Layer::Dense(d) => {
                    let delta_z: Vec<f64> = if i == n - 1 {
                        delta.data().to_vec()
                    } else {
                        delta
                            .data()
                            .iter()
                            .zip(output.data())
                            .map(|(g, &o)| g * d.activation.derivative_from_output(o))
                            .collect()
                    };
                    let g = grads.layers[i].as_mut().expect("dense grads");
                    d.backward(input, &delta_z, g, need_input_grad)
                }
                Layer::Conv1d(c) => {
                    let g = grads.layers[i].as_mut().expect("conv grads");
                    c.backward(input, &delta, g, need_input_grad)
                }
                Layer::Relu => {
                    let mut d = delta.clone();
                    d.data_mut()
                        .iter_mut()
                        .zip(input.data())
                        .for_each(|(g, &z)| *g *= super::layers::relu_grad(z));
                    Some(d)
                }
                Layer::MaxPool1d(_) => Some(MaxPool1d::backward(
                    input.shape(),
                    &delta,
                    pass.argmax[i].as_ref().expect("pool argmax cached"),
                )),
                Layer::Flatten => Some(
                    delta
                        .clone()
                        .reshape(input.shape().to_vec())
                        .expect("flatten inverse"),
                ),
                Layer::Dropout(_) => {
                    let mut d = delta.clone();
                    if let Some(mask) = &pass.masks[i] {
                        d.data_mut().iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                    }
                    Some(d)
                }
            };
            match next {
                Some(d) => delta = d,
                None => break,
            }
        }
        grads
    }

    /// Loss and gradients for one example.
    pub fn loss_and_gradients(
        &self,
        input: &[f64],
        target: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients)> {
        let pass = self.forward_train(input, rng)?;
        let loss = bce_loss(pass.output(), target);
        Ok((loss, self.backward(&pass, target)))
    }
}

fn at_layer(index: usize, e: Error) -> Error {
    match e {
        Error::Shape(msg) => Error::Shape(format!("layer {index}: {msg}")),
        other => other,
    }
}
