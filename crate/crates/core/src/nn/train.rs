use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{bce_loss, Gradients, Network};
use super::optim::OptimizerSpec;
use crate::dataio::Label;
use crate::error::{Error, Result};
use crate::metrics;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 32,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Per-epoch logloss and AUC on the training and validation parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_logloss: f64,
    pub train_auc: f64,
    pub val_logloss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochMetrics>,
    pub train_size: usize,
    pub val_size: usize,
}

impl TrainReport {
    pub fn epochs(&self) -> usize {
        self.history.len()
    }

    pub fn last(&self) -> Option<&EpochMetrics> {
        self.history.last()
    }

    /// Column means over all epochs; `epoch` holds the epoch count.
    pub fn mean(&self) -> Option<EpochMetrics> {
        let n = self.history.len();
        if n == 0 {
            return None;
        }
        let avg = |f: fn(&EpochMetrics) -> f64| self.history.iter().map(f).sum::<f64>() / n as f64;
        Some(EpochMetrics {
            epoch: n,
            train_logloss: avg(|m| m.train_logloss),
            train_auc: avg(|m| m.train_auc),
            val_logloss: avg(|m| m.val_logloss),
            val_auc: avg(|m| m.val_auc),
        })
    }

    /// `epoch,train_logloss,train_auc,val_logloss,val_auc`, epochs from 1.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_logloss", "train_auc", "val_logloss", "val_auc"])?;
        for m in &self.history {
            w.write_record([
                m.epoch.to_string(),
                m.train_logloss.to_string(),
                m.train_auc.to_string(),
                m.val_logloss.to_string(),
                m.val_auc.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<train log>", e))?;
        Ok(())
    }
}

/// Stratified hold-out: from each class, `round(fraction * count)` examples
/// (at least one when the class has two or more) go to validation.
pub fn validation_split(labels: &[Label], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [Label::Case, Label::Control] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let mut n_val = (fraction * idx.len() as f64).round() as usize;
        if idx.len() >= 2 {
            n_val = n_val.clamp(1, idx.len() - 1);
        } else {
            n_val = 0;
        }
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn evaluate(net: &Network, inputs: &[Vec<f64>], labels: &[Label], idx: &[usize]) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let scores = idx
        .par_iter()
        .map(|&i| net.predict(&inputs[i]))
        .collect::<Result<Vec<f64>>>()?;
    let y: Vec<Label> = idx.iter().map(|&i| labels[i]).collect();
    let loss = scores
        .iter()
        .zip(&y)
        .map(|(&p, l)| bce_loss(p, l.target()))
        .sum::<f64>()
        / scores.len() as f64;
    let auc = metrics::auc_from_scores(&scores, &y).unwrap_or(f64::NAN);
    Ok((loss, auc))
}

/// Mini-batch training with a per-epoch reshuffle. Per-example gradients in
/// a batch are computed in parallel and summed in batch order, so the result
/// depends only on the inputs and `config.seed`. No early stopping: the
/// final weights are returned.
pub fn train(
    mut network: Network,
    optimizer: &OptimizerSpec,
    inputs: &[Vec<f64>],
    labels: &[Label],
    config: &TrainConfig,
) -> Result<(Network, TrainReport)> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::Parameter(format!(
            "training needs matching non-empty inputs and labels ({} vs {})",
            inputs.len(),
            labels.len()
        )));
    }
    if !(config.val_fraction > 0.0 && config.val_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "validation fraction {} must be in (0, 1)",
            config.val_fraction
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::Parameter("batch size must be >= 1".into()));
    }
    if let Some(bad) = inputs.iter().position(|x| x.len() != network.input_len()) {
        return Err(Error::Shape(format!(
            "example {bad} has length {}, network expects {}",
            inputs[bad].len(),
            network.input_len()
        )));
    }

    let (train_idx, val_idx) =
        validation_split(labels, config.val_fraction, seed::derive(config.seed, &[1]));
    let mut report = TrainReport {
        history: Vec::with_capacity(config.epochs),
        train_size: train_idx.len(),
        val_size: val_idx.len(),
    };
    if config.epochs == 0 {
        return Ok((network, report));
    }

    let sizes: Vec<usize> = network.params().iter().map(|p| p.len()).collect();
    let mut opt = optimizer.build(&sizes);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[2]));
    let mut order = train_idx.clone();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let net = &network;
            let per_example = batch
                .par_iter()
                .enumerate()
                .map(|(pos, &i)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(
                        config.seed,
                        &[3, epoch as u64, b as u64, pos as u64],
                    ));
                    net.loss_and_gradients(&inputs[i], labels[i].target(), Some(&mut rng))
                })
                .collect::<Result<Vec<_>>>()?;

            let mut grads = Gradients::zeros_for(&network);
            let mut loss = 0.0;
            for (l, g) in &per_example {
                loss += l;
                grads.add_assign(g);
            }
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss in epoch {}",
                    epoch + 1
                )));
            }
            grads.scale(1.0 / batch.len() as f64);
            let grad_slices = grads.slices();
            let mut params = network.params_mut();
            opt.step(&mut params, &grad_slices, batch.len())
                .map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!("epoch {}: {msg}", epoch + 1)),
                    other => other,
                })?;
        }

        let (train_logloss, train_auc) = evaluate(&network, inputs, labels, &train_idx)?;
        let (val_logloss, val_auc) = evaluate(&network, inputs, labels, &val_idx)?;
        if !train_logloss.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged in epoch {}",
                epoch + 1
            )));
        }
        log::debug!(
            "epoch {:>4}: train logloss {train_logloss:.4} auc {train_auc:.4} | val logloss {val_logloss:.4} auc {val_auc:.4}",
            epoch + 1
        );
        report.history.push(EpochMetrics {
            epoch: epoch + 1,
            train_logloss,
            train_auc,
            val_logloss,
            val_auc,
        });
    }
    Ok((network, report))
}

/// Fraction of examples classified correctly at threshold 0.5.
pub fn accuracy(network: &Network, inputs: &[Vec<f64>], labels: &[Label]) -> Result<f64> {
    let correct = inputs
        .par_iter()
        .zip(labels.par_iter())
        .map(|(x, l)| network.predict(x).map(|p| ((p >= 0.5) == l.is_case()) as usize))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / inputs.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{Activation, LayerSpec};
    use crate::nn::optim::AdamConfig;

    fn specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv1d { filters: 3, kernel: 4 },
            LayerSpec::Relu,
            LayerSpec::MaxPool1d { pool: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 5, activation: Activation::Sigmoid },
            LayerSpec::Dense { units: 1, activation: Activation::Sigmoid },
        ]
    }

    fn toy() -> (Vec<Vec<f64>>, Vec<Label>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..40 {
            let case = i % 2 == 0;
            let offset = if case { 1.0 } else { -1.0 };
            xs.push((0..16).map(|t| offset + 0.3 * ((t * (i + 1)) as f64).sin()).collect());
            ys.push(if case { Label::Case } else { Label::Control });
        }
        (xs, ys)
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (xs, ys) = toy();
        let net = Network::init(&[1, 16], &specs(), 3).unwrap();
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (trained, report) = train(net.clone(), &OptimizerSpec::default(), &xs, &ys, &config).unwrap();
        assert_eq!(trained, net);
        assert!(report.history.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let (xs, ys) = toy();
        let config = TrainConfig {
            epochs: 60,
            batch_size: 8,
            val_fraction: 0.2,
            seed: 11,
        };
        let opt = OptimizerSpec::Adam(AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        });
        let run = || {
            let net = Network::init(&[1, 16], &specs(), 3).unwrap();
            train(net, &opt, &xs, &ys, &config).unwrap()
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.epochs(), 60);
        assert_eq!(ra.train_size + ra.val_size, 40);
        let first = ra.history[0].train_logloss;
        let last = ra.last().unwrap().train_logloss;
        assert!(last < first, "{first} -> {last}");
        assert!(accuracy(&a, &xs, &ys).unwrap() > 0.9);
    }

    #[test]
    fn rejects_bad_configs() {
        let (xs, ys) = toy();
        let net = Network::init(&[1, 16], &specs(), 3).unwrap();
        let bad = TrainConfig {
            val_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(train(net.clone(), &OptimizerSpec::default(), &xs, &ys, &bad).is_err());
        let short = vec![vec![0.0; 15]];
        assert!(train(net, &OptimizerSpec::default(), &short, &ys[..1], &TrainConfig::default()).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let (xs, ys) = toy();
        let huge: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().map(|v| v * f64::MAX).collect()).collect();
        let net = Network::init(&[1, 16], &specs(), 3).unwrap();
        let config = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let err = train(net, &OptimizerSpec::default(), &huge, &ys, &config).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
    }

    #[test]
    fn stratified_validation() {
        let labels: Vec<Label> = (0..20)
            .map(|i| if i < 10 { Label::Case } else { Label::Control })
            .collect();
        let (train, val) = validation_split(&labels, 0.1, 5);
        assert_eq!(val.len(), 2);
        assert_eq!(train.len(), 18);
        assert_eq!(val.iter().filter(|&&i| labels[i].is_case()).count(), 1);
    }

    #[test]
    fn report_csv_schema() {
        let report = TrainReport {
            history: vec![EpochMetrics {
                epoch: 1,
                train_logloss: 0.5,
                train_auc: 0.75,
                val_logloss: 0.6,
                val_auc: 0.7,
            }],
            train_size: 1,
            val_size: 1,
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_logloss,train_auc,val_logloss,val_auc\n1,0.5,0.75,0.6,0.7\n"
        );
        assert_eq!(report.mean().unwrap().val_auc, 0.7);
    }
}
