//! Named model presets per window size, and the fitted-model container.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{flda_fit, rf_fit, svm_fit, FldaModel, FldaParams, ForestModel, ForestParams, SvmModel, SvmParams};
use crate::dataio::Label;
use crate::error::{Error, Result};
use crate::nn::{train, Activation, AdamConfig, LayerSpec, Network, OptimizerSpec, TrainConfig, TrainReport};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const STUDY_WINDOW_SIZES: [usize; 5] = [100, 200, 300, 400, 500];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Cnn1d,
    MlpBaseline,
    SvmRbf,
    RandomForest,
    Flda,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Cnn1d,
        Family::MlpBaseline,
        Family::SvmRbf,
        Family::RandomForest,
        Family::Flda,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Cnn1d => "cnn1d",
            Family::MlpBaseline => "mlp_baseline",
            Family::SvmRbf => "svm_rbf",
            Family::RandomForest => "random_forest",
            Family::Flda => "flda",
        }
    }

    pub fn is_network(self) -> bool {
        matches!(self, Family::Cnn1d | Family::MlpBaseline)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown model family '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetParams {
    pub layers: Vec<LayerSpec>,
    pub optimizer: OptimizerSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Hyperparameters {
    Net(NetParams),
    Svm(SvmParams),
    Forest(ForestParams),
    Flda(FldaParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct ModelSpec {
    pub family: Family,
    pub window_size: usize,
    pub hyperparameters: Hyperparameters,
    /// Seeds weight initialization and tree construction.
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    family: Family,
    window_size: usize,
    seed: u64,
    hyperparameters: toml::Table,
}

fn to_table<T: Serialize>(value: &T) -> toml::Table {
    toml::Table::try_from(value).expect("hyperparameters serialize to a table")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SvmKeys {
    gamma: f64,
    c: f64,
    tol: f64,
    platt: bool,
    #[serde(default)]
    max_iter: Option<usize>,
    cache_mb: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForestKeys {
    n_trees: usize,
    bootstrap: bool,
    #[serde(default)]
    mtry: Option<usize>,
    #[serde(default)]
    max_depth: Option<usize>,
    min_leaf: usize,
    #[serde(default)]
    oob: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FldaKeys {
    ridge: f64,
}

impl From<ModelSpec> for RawSpec {
    fn from(spec: ModelSpec) -> Self {
        let hyperparameters = match &spec.hyperparameters {
            Hyperparameters::Net(p) => to_table(p),
            Hyperparameters::Svm(p) => to_table(&SvmKeys {
                gamma: p.gamma,
                c: p.c,
                tol: p.tol,
                platt: p.platt,
                max_iter: p.max_iter,
                cache_mb: p.cache_mb,
            }),
            Hyperparameters::Forest(p) => to_table(&ForestKeys {
                n_trees: p.n_trees,
                bootstrap: p.bootstrap,
                mtry: p.mtry,
                max_depth: p.max_depth,
                min_leaf: p.min_leaf,
                oob: p.oob,
            }),
            Hyperparameters::Flda(p) => to_table(&FldaKeys { ridge: p.ridge }),
        };
        RawSpec {
            family: spec.family,
            window_size: spec.window_size,
            seed: spec.seed,
            hyperparameters,
        }
    }
}

impl TryFrom<RawSpec> for ModelSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let bad = |e: toml::de::Error| {
            Error::Config(format!("hyperparameters for {}: {}", raw.family, e.message()))
        };
        let table = raw.hyperparameters.clone();
        let hyperparameters = match raw.family {
            Family::Cnn1d | Family::MlpBaseline => Hyperparameters::Net(table.try_into().map_err(bad)?),
            Family::SvmRbf => {
                let k: SvmKeys = table.try_into().map_err(bad)?;
                Hyperparameters::Svm(SvmParams {
                    gamma: k.gamma,
                    c: k.c,
                    tol: k.tol,
                    platt: k.platt,
                    max_iter: k.max_iter,
                    cache_mb: k.cache_mb,
                })
            }
            Family::RandomForest => {
                let k: ForestKeys = table.try_into().map_err(bad)?;
                Hyperparameters::Forest(ForestParams {
                    n_trees: k.n_trees,
                    bootstrap: k.bootstrap,
                    mtry: k.mtry,
                    max_depth: k.max_depth,
                    min_leaf: k.min_leaf,
                    oob: k.oob,
                })
            }
            Family::Flda => {
                let k: FldaKeys = table.try_into().map_err(bad)?;
                Hyperparameters::Flda(FldaParams { ridge: k.ridge })
            }
        };
        let spec = ModelSpec {
            family: raw.family,
            window_size: raw.window_size,
            hyperparameters,
            seed: raw.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.window_size;
        if n == 0 {
            return Err(Error::Config("window size must be >= 1".into()));
        }
        match (&self.hyperparameters, self.family) {
            (Hyperparameters::Net(p), Family::Cnn1d | Family::MlpBaseline) => {
                if p.batch_size == 0 {
                    return Err(Error::Config("batch_size must be >= 1".into()));
                }
                if !(p.val_fraction > 0.0 && p.val_fraction < 1.0) {
                    return Err(Error::Config(format!("val_fraction {} not in (0, 1)", p.val_fraction)));
                }
                // shape check without touching any RNG state that matters
                Network::init(&self.input_shape(), &p.layers, 0)?;
                Ok(())
            }
            (Hyperparameters::Svm(p), Family::SvmRbf) => {
                if p.gamma > 0.0 && p.c > 0.0 && p.tol > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config("svm_rbf needs positive gamma, c and tol".into()))
                }
            }
            (Hyperparameters::Forest(p), Family::RandomForest) => {
                if p.n_trees == 0 || p.min_leaf == 0 || p.mtry == Some(0) || p.mtry.is_some_and(|m| m > n) {
                    Err(Error::Config("random_forest needs n_trees, min_leaf >= 1 and 1 <= mtry <= n".into()))
                } else {
                    Ok(())
                }
            }
            (Hyperparameters::Flda(p), Family::Flda) => {
                if p.ridge >= 0.0 && p.ridge.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config("flda ridge must be finite and >= 0".into()))
                }
            }
            (_, family) => Err(Error::Config(format!("hyperparameters do not match family {family}"))),
        }
    }

    /// `(1, n)` for the convolutional net, `(n)` otherwise.
    pub fn input_shape(&self) -> Vec<usize> {
        match self.family {
            Family::Cnn1d => vec![1, self.window_size],
            _ => vec![self.window_size],
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn net_params(&self) -> Option<&NetParams> {
        match &self.hyperparameters {
            Hyperparameters::Net(p) => Some(p),
            _ => None,
        }
    }

    pub fn net_params_mut(&mut self) -> Option<&mut NetParams> {
        match &mut self.hyperparameters {
            Hyperparameters::Net(p) => Some(p),
            _ => None,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }
}

fn adam(lr: f64) -> OptimizerSpec {
    OptimizerSpec::Adam(AdamConfig {
        lr,
        ..AdamConfig::default()
    })
}

/// conv(20, n/2) → ReLU → maxpool(2) → dense(10, sigmoid) → dense(1, sigmoid),
/// Adam at 1e-4, batch 32, 500 epochs, 10% validation.
pub fn preset_cnn1d(n: usize) -> Result<ModelSpec> {
    if n < 2 {
        return Err(Error::Parameter(format!("window size {n} too small for cnn1d; use 2 or more")));
    }
    if n % 2 == 1 {
        return Err(Error::Parameter(format!(
            "cnn1d kernel is half the window, so the window must be even; got {n}, nearest even sizes are {} and {}",
            n - 1,
            n + 1
        )));
    }
    Ok(ModelSpec {
        family: Family::Cnn1d,
        window_size: n,
        hyperparameters: Hyperparameters::Net(NetParams {
            layers: vec![
                LayerSpec::Conv1d {
                    filters: 20,
                    kernel: n / 2,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool1d { pool: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 10,
                    activation: Activation::Sigmoid,
                },
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Sigmoid,
                },
            ],
            optimizer: adam(1e-4),
            epochs: 500,
            batch_size: 32,
            val_fraction: 0.1,
        }),
        seed: 0,
    })
}

/// Five dense(10, ReLU) layers each followed by dropout 0.5, then
/// dense(1, sigmoid). Adam at 1e-3.
pub fn preset_mlp(n: usize) -> Result<ModelSpec> {
    if n == 0 {
        return Err(Error::Parameter("window size must be >= 1".into()));
    }
    let mut layers = Vec::new();
    for _ in 0..5 {
        layers.push(LayerSpec::Dense {
            units: 10,
            activation: Activation::Relu,
        });
        layers.push(LayerSpec::Dropout { rate: 0.5 });
    }
    layers.push(LayerSpec::Dense {
        units: 1,
        activation: Activation::Sigmoid,
    });
    Ok(ModelSpec {
        family: Family::MlpBaseline,
        window_size: n,
        hyperparameters: Hyperparameters::Net(NetParams {
            layers,
            optimizer: adam(1e-3),
            epochs: 500,
            batch_size: 32,
            val_fraction: 0.1,
        }),
        seed: 0,
    })
}

pub fn preset_baseline(family: Family, n: usize) -> Result<ModelSpec> {
    if n == 0 {
        return Err(Error::Parameter("window size must be >= 1".into()));
    }
    let hyperparameters = match family {
        Family::SvmRbf => Hyperparameters::Svm(SvmParams::default()),
        Family::RandomForest => Hyperparameters::Forest(ForestParams {
            mtry: Some(((n as f64).sqrt().floor() as usize).max(1)),
            ..ForestParams::default()
        }),
        Family::Flda => Hyperparameters::Flda(FldaParams::default()),
        other => {
            return Err(Error::Parameter(format!(
                "{other} is not a baseline family (svm_rbf, random_forest, flda)"
            )))
        }
    };
    Ok(ModelSpec {
        family,
        window_size: n,
        hyperparameters,
        seed: 0,
    })
}

pub fn preset(family: Family, n: usize) -> Result<ModelSpec> {
    match family {
        Family::Cnn1d => preset_cnn1d(n),
        Family::MlpBaseline => preset_mlp(n),
        _ => preset_baseline(family, n),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Raw bpm values.
    None,
    /// Subtract the training mean and divide by the training standard
    /// deviation, both pooled over every sample of every training window.
    #[default]
    TrainZscore,
}

impl FromStr for Normalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "train_zscore" => Ok(Normalization::TrainZscore),
            _ => Err(Error::Config(format!("unknown normalization '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub mean: f64,
    pub std: f64,
}

impl InputScaling {
    pub fn fit(inputs: &[Vec<f64>]) -> Result<Self> {
        let n: usize = inputs.iter().map(Vec::len).sum();
        if n == 0 {
            return Err(Error::Validation("cannot scale an empty training set".into()));
        }
        let mean = inputs.iter().flatten().sum::<f64>() / n as f64;
        let var = inputs.iter().flatten().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(InputScaling { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| (v - self.mean) / self.std).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitOptions {
    pub normalization: Normalization,
    /// Seeds the validation split, shuffling and dropout.
    pub train_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Network(Network),
    Svm(SvmModel),
    Forest(ForestModel),
    Flda(FldaModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub scaling: Option<InputScaling>,
    pub model: FittedModel,
}

/// Fit `spec` to `inputs`. Networks also return their per-epoch report.
pub fn fit(
    spec: &ModelSpec,
    inputs: &[Vec<f64>],
    labels: &[Label],
    options: &FitOptions,
) -> Result<(TrainedModel, Option<TrainReport>)> {
    spec.validate()?;
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::Parameter(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    if let Some(bad) = inputs.iter().find(|x| x.len() != spec.window_size) {
        return Err(Error::Shape(format!(
            "{} expects windows of {} samples, got {}",
            spec.family,
            spec.window_size,
            bad.len()
        )));
    }
    let scaling = match options.normalization {
        Normalization::None => None,
        Normalization::TrainZscore => Some(InputScaling::fit(inputs)?),
    };
    let scaled: Vec<Vec<f64>>;
    let xs: &[Vec<f64>] = match &scaling {
        Some(s) => {
            scaled = inputs.iter().map(|x| s.apply(x)).collect();
            &scaled
        }
        None => inputs,
    };

    let (model, report) = match &spec.hyperparameters {
        Hyperparameters::Net(p) => {
            let network = Network::init(&spec.input_shape(), &p.layers, spec.seed)?;
            let config = TrainConfig {
                epochs: p.epochs,
                batch_size: p.batch_size,
                val_fraction: p.val_fraction,
                seed: options.train_seed,
            };
            let (network, report) = train(network, &p.optimizer, xs, labels, &config)?;
            (FittedModel::Network(network), Some(report))
        }
        Hyperparameters::Svm(p) => (FittedModel::Svm(svm_fit(xs, labels, p)?), None),
        Hyperparameters::Forest(p) => (FittedModel::Forest(rf_fit(xs, labels, p, spec.seed)?), None),
        Hyperparameters::Flda(p) => (FittedModel::Flda(flda_fit(xs, labels, p)?), None),
    };
    Ok((
        TrainedModel {
            format_version: MODEL_FORMAT_VERSION,
            spec: spec.clone(),
            scaling,
            model,
        },
        report,
    ))
}

impl TrainedModel {
    pub fn family(&self) -> Family {
        self.spec.family
    }

    /// P(case) for one window.
    pub fn predict(&self, window: &[f64]) -> Result<f64> {
        if window.len() != self.spec.window_size {
            return Err(Error::Shape(format!(
                "model expects {} samples, got {}",
                self.spec.window_size,
                window.len()
            )));
        }
        let scaled;
        let x = match &self.scaling {
            Some(s) => {
                scaled = s.apply(window);
                &scaled[..]
            }
            None => window,
        };
        let p = match &self.model {
            FittedModel::Network(net) => net.predict(x)?,
            FittedModel::Svm(m) => m.predict(x),
            FittedModel::Forest(m) => m.predict(x),
            FittedModel::Flda(m) => m.predict(x),
        };
        if !p.is_finite() {
            return Err(Error::Numeric(format!("{} produced a non-finite score", self.family())));
        }
        Ok(p)
    }

    pub fn predict_batch(&self, windows: &[Vec<f64>]) -> Result<Vec<f64>> {
        windows.par_iter().map(|w| self.predict(w)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let v: Version = serde_json::from_str(text)?;
        if v.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                v.format_version
            )));
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
