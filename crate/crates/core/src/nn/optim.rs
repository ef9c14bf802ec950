use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Learning-rate decay per step: `lr / (1 + decay * t)`.
    pub decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay: 0.0,
        }
    }
}

/// Momentum SGD with a linear momentum ramp, rate annealing and L2 weight
/// decay. Momentum rises from `momentum_start` to `momentum_stable` over the
/// first `momentum_ramp` training examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum_start: f64,
    pub momentum_ramp: f64,
    pub momentum_stable: f64,
    /// `lr / (1 + rate_annealing * examples_seen)`; 0 disables.
    pub rate_annealing: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.005,
            momentum_start: 0.5,
            momentum_ramp: 1e-6,
            momentum_stable: 0.0,
            rate_annealing: 0.0,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Adam(AdamConfig),
    Sgd(SgdConfig),
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::Adam(AdamConfig::default())
    }
}

impl OptimizerSpec {
    pub fn build(&self, param_sizes: &[usize]) -> Box<dyn Optimizer> {
        match *self {
            OptimizerSpec::Adam(config) => Box::new(Adam::new(config, param_sizes)),
            OptimizerSpec::Sgd(config) => Box::new(Sgd::new(config, param_sizes)),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            OptimizerSpec::Adam(c) => c.lr,
            OptimizerSpec::Sgd(c) => c.lr,
        }
    }
}

pub trait Optimizer: Send {
    /// Apply one update. `examples` is the number of training examples the
    /// gradient averages over.
    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], examples: usize) -> Result<()>;
}

fn check(params: &[&mut [f64]], grads: &[&[f64]], state_len: usize) -> Result<()> {
    if params.len() != grads.len() || params.len() != state_len {
        return Err(Error::Shape(format!(
            "{} parameter tensors, {} gradients, {} state slots",
            params.len(),
            grads.len(),
            state_len
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Shape(format!(
                "tensor {i}: {} parameters vs {} gradients",
                p.len(),
                g.len()
            )));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient {} in tensor {i} at {j}",
                g[j]
            )));
        }
    }
    Ok(())
}

/// Moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(param_sizes: &[usize]) -> Self {
        AdamState {
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam step:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_update(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    check(params, grads, state.m.len())?;
    state.t += 1;
    let t = state.t as f64;
    let lr = config.lr / (1.0 + config.decay * (t - 1.0));
    let bc1 = 1.0 - config.beta1.powf(t);
    let bc2 = 1.0 - config.beta2.powf(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..p.len() {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

pub struct Adam {
    config: AdamConfig,
    state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig, param_sizes: &[usize]) -> Self {
        Adam {
            config,
            state: AdamState::new(param_sizes),
        }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], _examples: usize) -> Result<()> {
        adam_update(params, grads, &mut self.state, &self.config)
    }
}

pub struct Sgd {
    config: SgdConfig,
    velocity: Vec<Vec<f64>>,
    examples_seen: f64,
}

impl Sgd {
    pub fn new(config: SgdConfig, param_sizes: &[usize]) -> Self {
        Sgd {
            config,
            velocity: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            examples_seen: 0.0,
        }
    }

    pub fn momentum(&self) -> f64 {
        let c = &self.config;
        if c.momentum_ramp <= 0.0 {
            return c.momentum_stable;
        }
        let progress = (self.examples_seen / c.momentum_ramp).min(1.0);
        c.momentum_start + (c.momentum_stable - c.momentum_start) * progress
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], examples: usize) -> Result<()> {
        check(params, grads, self.velocity.len())?;
        let mu = self.momentum();
        let lr = self.config.lr / (1.0 + self.config.rate_annealing * self.examples_seen);
        let wd = self.config.weight_decay;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let vel = &mut self.velocity[i];
            for j in 0..p.len() {
                vel[j] = mu * vel[j] - lr * (g[j] + wd * p[j]);
                p[j] += vel[j];
            }
        }
        self.examples_seen += examples as f64;
        Ok(())
    }
}
