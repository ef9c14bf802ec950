//! End-to-end experiment runner and cross-run comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{load_dataset, DatasetManifest, DatasetSummary, Label, Record};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, roc_curve, EvalOptions, EvalReport, PositiveClass, RocCurve, ScoredSet};
use crate::models::{fit, preset, Family, FitOptions, Hyperparameters, ModelSpec, Normalization, TrainedModel};
use crate::nn::TrainReport;
use crate::preprocess::{repair, Band, RepairConfig};
use crate::seed;
use crate::segmentation::{
    balance_undersample, segment, smote, split_records, undersample_majority, undersample_target, SplitPlan,
    SplitTarget, Window,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Balancing {
    /// Keep every case window, sample as many control windows.
    #[default]
    WindowUndersample,
    /// SMOTE the case windows, then undersample controls relative to the
    /// enlarged case set.
    SmotePlusUndersample,
}

/// One flat key=value file fully determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset manifest; relative paths resolve against the config file.
    pub manifest: PathBuf,
    pub output: PathBuf,
    pub window_sizes: Vec<usize>,
    pub families: Vec<Family>,
    #[serde(default)]
    pub balancing: Balancing,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub positive_class: PositiveClass,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,

    pub seed_split: u64,
    pub seed_balance: u64,
    pub seed_init: u64,
    pub seed_train: u64,

    #[serde(default = "default_train_ratio")]
    pub split_train: f64,
    #[serde(default = "default_test_ratio")]
    pub split_test: f64,
    /// Exact training record counts; both must be set to take effect.
    #[serde(default)]
    pub split_case_train: Option<usize>,
    #[serde(default)]
    pub split_control_train: Option<usize>,

    #[serde(default = "default_smote_k")]
    pub smote_k: usize,
    #[serde(default = "default_smote_amount")]
    pub smote_amount: u32,
    #[serde(default = "default_undersample_percent")]
    pub undersample_percent: u32,

    #[serde(default = "default_band_low")]
    pub band_low: f64,
    #[serde(default = "default_band_high")]
    pub band_high: f64,
    #[serde(default)]
    pub drop_low_quality: bool,

    /// Overrides applied on top of the presets.
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub n_trees: Option<usize>,
    #[serde(default)]
    pub save_models: bool,
}

fn default_threshold() -> f64 {
    0.5
}
fn default_workers() -> usize {
    1
}
fn default_train_ratio() -> f64 {
    0.8
}
fn default_test_ratio() -> f64 {
    0.2
}
fn default_smote_k() -> usize {
    5
}
fn default_smote_amount() -> u32 {
    600
}
fn default_undersample_percent() -> u32 {
    100
}
fn default_band_low() -> f64 {
    50.0
}
fn default_band_high() -> f64 {
    210.0
}

impl ExperimentConfig {
    pub fn new(manifest: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            manifest: manifest.into(),
            output: output.into(),
            window_sizes: vec![200],
            families: vec![Family::Cnn1d],
            balancing: Balancing::default(),
            normalization: Normalization::default(),
            positive_class: PositiveClass::default(),
            threshold: default_threshold(),
            workers: default_workers(),
            seed_split: 1,
            seed_balance: 2,
            seed_init: 3,
            seed_train: 4,
            split_train: default_train_ratio(),
            split_test: default_test_ratio(),
            split_case_train: None,
            split_control_train: None,
            smote_k: default_smote_k(),
            smote_amount: default_smote_amount(),
            undersample_percent: default_undersample_percent(),
            band_low: default_band_low(),
            band_high: default_band_high(),
            drop_low_quality: false,
            epochs: None,
            batch_size: None,
            n_trees: None,
            save_models: false,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Read a config file; relative manifest and output paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            if config.manifest.is_relative() {
                config.manifest = dir.join(&config.manifest);
            }
            if config.output.is_relative() {
                config.output = dir.join(&config.output);
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn split_target(&self) -> SplitTarget {
        match (self.split_case_train, self.split_control_train) {
            (Some(case_train), Some(control_train)) => SplitTarget::Counts {
                case_train,
                control_train,
            },
            _ => SplitTarget::Ratios {
                train: self.split_train,
                test: self.split_test,
            },
        }
    }

    pub fn band(&self) -> Band {
        Band {
            low: self.band_low,
            high: self.band_high,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            threshold: self.threshold,
            positive: self.positive_class,
            ..EvalOptions::default()
        }
    }

    /// The preset for one cell with config overrides and derived seeds applied.
    pub fn model_spec(&self, family: Family, window: usize) -> Result<ModelSpec> {
        let family_index = Family::ALL.iter().position(|f| *f == family).unwrap_or(0) as u64;
        let mut spec = preset(family, window)?.with_seed(seed::derive(self.seed_init, &[window as u64, family_index]));
        if let Some(p) = spec.net_params_mut() {
            if let Some(e) = self.epochs {
                p.epochs = e;
            }
            if let Some(b) = self.batch_size {
                p.batch_size = b;
            }
        }
        if let (Hyperparameters::Forest(p), Some(t)) = (&mut spec.hyperparameters, self.n_trees) {
            p.n_trees = t;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::Config("no model families configured".into()));
        }
        if self.window_sizes.is_empty() {
            return Err(Error::Config("no window sizes configured".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} not in [0, 1]", self.threshold)));
        }
        if self.split_case_train.is_some() != self.split_control_train.is_some() {
            return Err(Error::Config(
                "split_case_train and split_control_train must be given together".into(),
            ));
        }
        if self.balancing == Balancing::SmotePlusUndersample {
            if self.smote_k == 0 || self.smote_amount == 0 || !self.smote_amount.is_multiple_of(100) {
                return Err(Error::Config("smote_k >= 1 and smote_amount a positive multiple of 100".into()));
            }
            if self.undersample_percent == 0 {
                return Err(Error::Config("undersample_percent must be >= 1".into()));
            }
        }
        self.band().validate().map_err(|e| Error::Config(e.to_string()))?;
        for &n in &self.window_sizes {
            for &family in &self.families {
                self.model_spec(family, n)
                    .map_err(|e| Error::Config(format!("{family} at W={n}: {e}")))?;
            }
        }
        Ok(())
    }

    /// Every seed and override that determines the run.
    pub fn seed_manifest(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# seeds and derived per-cell seeds; rerun with the same config to reproduce");
        let _ = writeln!(s, "seed_split = {}", self.seed_split);
        let _ = writeln!(s, "seed_balance = {}", self.seed_balance);
        let _ = writeln!(s, "seed_init = {}", self.seed_init);
        let _ = writeln!(s, "seed_train = {}", self.seed_train);
        for &n in &self.window_sizes {
            let _ = writeln!(s, "balance_train_W{n} = {}", balance_seed(self.seed_balance, n, 0));
            let _ = writeln!(s, "balance_test_W{n} = {}", balance_seed(self.seed_balance, n, 1));
            for &family in &self.families {
                if let Ok(spec) = self.model_spec(family, n) {
                    let _ = writeln!(s, "init_{family}_W{n} = {}", spec.seed);
                    let _ = writeln!(s, "train_{family}_W{n} = {}", train_seed(self.seed_train, family, n));
                }
            }
        }
        s
    }
}

fn balance_seed(base: u64, window: usize, side: u64) -> u64 {
    seed::derive(base, &[window as u64, side])
}

fn train_seed(base: u64, family: Family, window: usize) -> u64 {
    let idx = Family::ALL.iter().position(|f| *f == family).unwrap_or(0) as u64;
    seed::derive(base, &[window as u64, idx])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Preprocess,
    Split,
    Segment,
    Balance,
    Train,
    Evaluate,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Preprocess => "preprocess",
            Stage::Split => "split",
            Stage::Segment => "segment",
            Stage::Balance => "balance",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub family: Option<Family>,
    pub window: Option<usize>,
    pub stage: Stage,
    pub message: String,
}

/// Repaired, labelled records ready for splitting.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub records: Vec<Record>,
    pub summary: DatasetSummary,
    pub dropped: Vec<Failure>,
}

/// Load the manifest and repair every record. Records that cannot be
/// repaired are dropped and reported.
pub fn prepare_records(config: &ExperimentConfig) -> Result<PreparedData> {
    let manifest = DatasetManifest::load(&config.manifest)?;
    let dataset = load_dataset(&manifest)?;
    let repair_config = RepairConfig {
        band: config.band(),
        ..RepairConfig::default()
    };
    let repaired: Vec<(Record, Result<crate::preprocess::RepairReport>)> = dataset
        .records
        .into_par_iter()
        .map(|r| {
            let rep = repair(&r.id, &r.fhr, &repair_config);
            (r, rep)
        })
        .collect();
    let mut records = Vec::new();
    let mut dropped = Vec::new();
    for (mut record, outcome) in repaired {
        match outcome {
            Ok(rep) if rep.low_quality && config.drop_low_quality => dropped.push(Failure {
                family: None,
                window: None,
                stage: Stage::Preprocess,
                message: format!("record {}: low signal quality", record.id),
            }),
            Ok(rep) => {
                record.fhr = rep.signal.samples;
                records.push(record);
            }
            Err(e) => {
                log::warn!("dropping record {}: {e}", record.id);
                dropped.push(Failure {
                    family: None,
                    window: None,
                    stage: Stage::Preprocess,
                    message: e.to_string(),
                });
            }
        }
    }
    let summary = DatasetSummary::of(&records);
    Ok(PreparedData {
        records,
        summary,
        dropped,
    })
}

/// Balanced training and test windows for one window size.
#[derive(Debug, Clone)]
pub struct CellData {
    pub train: Vec<Window>,
    pub test: Vec<Window>,
    /// The full, unbalanced test windows.
    pub test_all: Vec<Window>,
}

fn windows_of(records: &[Record], ids: &std::collections::BTreeSet<String>, n: usize) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for r in records.iter().filter(|r| ids.contains(&r.id)) {
        out.extend(segment(r, n).map_err(|e| Error::in_record(&r.id, e))?);
    }
    Ok(out)
}

fn split_by_label(windows: Vec<Window>) -> (Vec<Window>, Vec<Window>) {
    windows.into_iter().partition(|w| w.label.is_case())
}

pub fn cell_data(
    records: &[Record],
    plan: &SplitPlan,
    window: usize,
    config: &ExperimentConfig,
) -> std::result::Result<CellData, (Stage, Error)> {
    let train_all = windows_of(records, &plan.train_records, window).map_err(|e| (Stage::Segment, e))?;
    let test_all = windows_of(records, &plan.test_records, window).map_err(|e| (Stage::Segment, e))?;
    plan.check_no_leakage(&train_all, &test_all)
        .map_err(|e| (Stage::Split, e))?;

    let (cases, controls) = split_by_label(train_all);
    let train = match config.balancing {
        Balancing::WindowUndersample => {
            balance_undersample(&cases, &controls, balance_seed(config.seed_balance, window, 0))
                .map_err(|e| (Stage::Balance, e))?
                .into_windows()
        }
        Balancing::SmotePlusUndersample => {
            let s = balance_seed(config.seed_balance, window, 0);
            let mut minority = cases.clone();
            minority.extend(
                smote(&cases, config.smote_k, config.smote_amount, seed::derive(s, &[0]))
                    .map_err(|e| (Stage::Balance, e))?,
            );
            let target = undersample_target(minority.len(), config.undersample_percent)
                .map_err(|e| (Stage::Balance, e))?
                .min(controls.len());
            let majority =
                undersample_majority(&controls, target, seed::derive(s, &[1])).map_err(|e| (Stage::Balance, e))?;
            minority.extend(majority);
            minority
        }
    };

    let (test_cases, test_controls) = split_by_label(test_all.clone());
    let test = balance_undersample(&test_cases, &test_controls, balance_seed(config.seed_balance, window, 1))
        .map_err(|e| (Stage::Balance, e))?
        .into_windows();
    Ok(CellData { train, test, test_all })
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub family: Family,
    pub window: usize,
    pub n_train_case: usize,
    pub n_train_control: usize,
    pub balanced: EvalReport,
    pub unbalanced: EvalReport,
    pub roc: RocCurve,
    pub train_report: Option<TrainReport>,
    pub model: TrainedModel,
}

fn inputs_and_labels(windows: &[Window]) -> (Vec<Vec<f64>>, Vec<Label>) {
    windows.iter().map(|w| (w.samples.clone(), w.label)).unzip()
}

fn score(model: &TrainedModel, windows: &[Window]) -> Result<ScoredSet> {
    let (xs, ys) = inputs_and_labels(windows);
    ScoredSet::new(model.predict_batch(&xs)?, ys)
}

/// Train one (window, family) cell on prepared data and evaluate it.
pub fn run_cell(
    data: &CellData,
    family: Family,
    window: usize,
    config: &ExperimentConfig,
) -> std::result::Result<CellResult, (Stage, Error)> {
    let spec = config.model_spec(family, window).map_err(|e| (Stage::Train, e))?;
    let (xs, ys) = inputs_and_labels(&data.train);
    let options = FitOptions {
        normalization: config.normalization,
        train_seed: train_seed(config.seed_train, family, window),
    };
    let (model, train_report) = fit(&spec, &xs, &ys, &options).map_err(|e| (Stage::Train, e))?;

    let eval = |windows: &[Window]| -> Result<(EvalReport, RocCurve)> {
        let set = score(&model, windows)?;
        let view = match config.positive_class {
            PositiveClass::Case => set.clone(),
            PositiveClass::Control => set.flipped(),
        };
        Ok((evaluate(&set, &config.eval_options())?, roc_curve(&view)?))
    };
    let (balanced, roc) = eval(&data.test).map_err(|e| (Stage::Evaluate, e))?;
    let (unbalanced, _) = eval(&data.test_all).map_err(|e| (Stage::Evaluate, e))?;
    Ok(CellResult {
        family,
        window,
        n_train_case: ys.iter().filter(|l| l.is_case()).count(),
        n_train_control: ys.iter().filter(|l| !l.is_case()).count(),
        balanced,
        unbalanced,
        roc,
        train_report,
        model,
    })
}

pub const METRICS_PREFIX: [&str; 5] = ["family", "window", "balancing", "n_train_case", "n_train_control"];
pub const METRICS_SUFFIX: [&str; 4] = [
    "final_val_auc",
    "final_val_logloss",
    "mean_val_auc",
    "mean_val_logloss",
];

pub fn metrics_header() -> Vec<String> {
    METRICS_PREFIX
        .iter()
        .chain(EvalReport::CSV_HEADER.iter())
        .chain(METRICS_SUFFIX.iter())
        .map(|s| s.to_string())
        .collect()
}

fn balancing_name(b: Balancing) -> &'static str {
    match b {
        Balancing::WindowUndersample => "window_undersample",
        Balancing::SmotePlusUndersample => "smote_plus_undersample",
    }
}

fn metrics_row(cell: &CellResult, report: &EvalReport, balancing: Balancing) -> Vec<String> {
    let mut row = vec![
        cell.family.to_string(),
        cell.window.to_string(),
        balancing_name(balancing).to_string(),
        cell.n_train_case.to_string(),
        cell.n_train_control.to_string(),
    ];
    row.extend(report.csv_fields());
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let tr = cell.train_report.as_ref();
    let last = tr.and_then(|r| r.last());
    let mean = tr.and_then(|r| r.mean());
    row.push(opt(last.map(|m| m.val_auc)));
    row.push(opt(last.map(|m| m.val_logloss)));
    row.push(opt(mean.as_ref().map(|m| m.val_auc)));
    row.push(opt(mean.as_ref().map(|m| m.val_logloss)));
    row
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// ROC curves of one family across window sizes as a standalone SVG.
pub fn roc_svg(family: Family, curves: &[(usize, &RocCurve)]) -> String {
    let (size, pad) = (400.0, 40.0);
    let plot = size - 2.0 * pad;
    let px = |fpr: f64| pad + fpr * plot;
    let py = |tpr: f64| size - pad - tpr * plot;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{pad}" y="{pad}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{family} ROC</text>"#,
        size / 2.0,
        pad - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">false positive rate</text>"#,
        size / 2.0,
        size - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" font-size="11" text-anchor="middle" transform="rotate(-90 12 {})">true positive rate</text>"#,
        size / 2.0,
        size / 2.0
    );
    for (i, (window, curve)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.fpr), py(p.tpr)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">W={window} AUC={:.3}</text>"#,
            px(0.55),
            py(0.25) + 14.0 * i as f64,
            curve.area()
        );
    }
    s.push_str("</svg>\n");
    s
}

fn failure_rows(failures: &[Failure]) -> Vec<Vec<String>> {
    failures
        .iter()
        .map(|f| {
            vec![
                f.family.map_or_else(String::new, |x| x.to_string()),
                f.window.map_or_else(String::new, |x| x.to_string()),
                f.stage.as_str().to_string(),
                f.message.clone(),
            ]
        })
        .collect()
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub cells: Vec<CellResult>,
    pub failures: Vec<Failure>,
    pub summary: DatasetSummary,
    pub plan: SplitPlan,
}

/// Run every (window, family) cell and write the reports into
/// `config.output`. A failing cell is reported in `failures.csv` while the
/// others proceed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let prepared = prepare_records(config)?;
    let plan = split_records(&prepared.records, config.split_target(), config.seed_split)?;
    if !plan.is_disjoint() {
        return Err(Error::Split("train and test record sets overlap".into()));
    }
    log::info!(
        "{} records ({} case, {} control); {} train / {} test",
        prepared.summary.total,
        prepared.summary.cases,
        prepared.summary.controls,
        plan.train_records.len(),
        plan.test_records.len()
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let mut failures = prepared.dropped.clone();
    let mut cell_inputs = BTreeMap::new();
    for &n in &config.window_sizes {
        match cell_data(&prepared.records, &plan, n, config) {
            Ok(d) => {
                cell_inputs.insert(n, d);
            }
            Err((stage, e)) => {
                for &family in &config.families {
                    failures.push(Failure {
                        family: Some(family),
                        window: Some(n),
                        stage,
                        message: e.to_string(),
                    });
                }
            }
        }
    }

    let jobs: Vec<(usize, Family)> = config
        .window_sizes
        .iter()
        .filter(|n| cell_inputs.contains_key(n))
        .flat_map(|&n| config.families.iter().map(move |&f| (n, f)))
        .collect();
    let outcomes: Vec<std::result::Result<CellResult, (Stage, Error)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(n, family)| {
                log::info!("training {family} at W={n}");
                run_cell(&cell_inputs[&n], family, n, config)
            })
            .collect()
    });

    let mut cells = Vec::new();
    for (&(n, family), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(c) => cells.push(c),
            Err((stage, e)) => {
                log::error!("{family} at W={n} failed during {}: {e}", stage.as_str());
                failures.push(Failure {
                    family: Some(family),
                    window: Some(n),
                    stage,
                    message: e.to_string(),
                });
            }
        }
    }

    write_outputs(config, &prepared.summary, &cells, &failures)?;
    Ok(ExperimentOutcome {
        cells,
        failures,
        summary: prepared.summary,
        plan,
    })
}

fn write_outputs(
    config: &ExperimentConfig,
    summary: &DatasetSummary,
    cells: &[CellResult],
    failures: &[Failure],
) -> Result<()> {
    let out = &config.output;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let header = metrics_header();
    let balanced: Vec<Vec<String>> = cells
        .iter()
        .map(|c| metrics_row(c, &c.balanced, config.balancing))
        .collect();
    let unbalanced: Vec<Vec<String>> = cells
        .iter()
        .map(|c| metrics_row(c, &c.unbalanced, config.balancing))
        .collect();
    write_csv(&out.join("metrics.csv"), &header, &balanced)?;
    write_csv(&out.join("metrics_unbalanced.csv"), &header, &unbalanced)?;

    let mut roc_rows = Vec::new();
    for c in cells {
        for p in &c.roc.points {
            roc_rows.push(vec![
                c.family.to_string(),
                c.window.to_string(),
                p.fpr.to_string(),
                p.tpr.to_string(),
                p.threshold.to_string(),
            ]);
        }
    }
    let roc_header: Vec<String> = ["family", "window", "fpr", "tpr", "threshold"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_csv(&out.join("roc.csv"), &roc_header, &roc_rows)?;

    for &family in &config.families {
        let curves: Vec<(usize, &RocCurve)> = cells
            .iter()
            .filter(|c| c.family == family)
            .map(|c| (c.window, &c.roc))
            .collect();
        if !curves.is_empty() {
            let path = out.join(format!("roc_{family}.svg"));
            fs::write(&path, roc_svg(family, &curves)).map_err(|e| Error::io(&path, e))?;
        }
    }

    for c in cells {
        if let Some(report) = &c.train_report {
            let path = out.join(format!("train_log_{}_W{}.csv", c.family, c.window));
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            report.write_csv(file)?;
        }
        if config.save_models {
            c.model.save(&out.join(format!("model_{}_W{}.json", c.family, c.window)))?;
        }
    }

    let failure_header: Vec<String> = ["family", "window", "stage", "message"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_csv(&out.join("failures.csv"), &failure_header, &failure_rows(failures))?;

    let seeds = out.join("seeds.toml");
    fs::write(&seeds, config.seed_manifest()).map_err(|e| Error::io(&seeds, e))?;
    let resolved = out.join("config.resolved.toml");
    fs::write(&resolved, config.to_toml()?).map_err(|e| Error::io(&resolved, e))?;
    let report = out.join("report.md");
    fs::write(&report, report_text(config, summary, cells, failures)).map_err(|e| Error::io(&report, e))?;
    Ok(())
}

fn report_text(config: &ExperimentConfig, summary: &DatasetSummary, cells: &[CellResult], failures: &[Failure]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Experiment report\n");
    let _ = writeln!(
        s,
        "Records: {} ({} case, {} control). Balancing: {}. Positive class: {:?}.\n",
        summary.total,
        summary.cases,
        summary.controls,
        balancing_name(config.balancing),
        config.positive_class
    );
    if config.balancing == Balancing::SmotePlusUndersample {
        let _ = writeln!(
            s,
            "Note: SMOTE interpolates whole window vectors (k={}, {}% oversampling, {}% undersampling), \
             not the hand-crafted record-level features of earlier SMOTE-based CTG studies.\n",
            config.smote_k, config.smote_amount, config.undersample_percent
        );
    }
    let _ = writeln!(
        s,
        "Confidence intervals are Wald intervals using window counts \
         (sensitivity: case windows, specificity: control windows, AUC: the smaller class). \
         Windows from one record are correlated, so these intervals are optimistic.\n"
    );
    let mut families: Vec<Family> = cells.iter().map(|c| c.family).collect();
    families.dedup();
    families.sort();
    families.dedup();
    for family in families {
        let _ = writeln!(s, "## {family}\n");
        let _ = writeln!(s, "| Window | Sensitivity | Specificity | AUC | Logloss |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for c in cells.iter().filter(|c| c.family == family) {
            let _ = writeln!(
                s,
                "| W={} | {} | {} | {} | {:.4} |",
                c.window,
                c.balanced.sensitivity.table_cell(),
                c.balanced.specificity.table_cell(),
                c.balanced.auc.table_cell(),
                c.balanced.logloss
            );
        }
        s.push('\n');
    }
    if !failures.is_empty() {
        let _ = writeln!(s, "## Failures\n");
        for f in failures {
            let _ = writeln!(
                s,
                "- {} {} [{}]: {}",
                f.family.map_or_else(|| "-".to_string(), |x| x.to_string()),
                f.window.map_or_else(|| "-".to_string(), |x| format!("W={x}")),
                f.stage.as_str(),
                f.message
            );
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCell {
    pub rank: usize,
    pub family: String,
    pub window: usize,
    pub auc: f64,
    pub auc_lo: f64,
    pub auc_hi: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub source: String,
    pub best_in_family: bool,
}

const COMPARE_COLUMNS: [&str; 7] = ["family", "window", "auc", "auc_lo", "auc_hi", "sensitivity", "specificity"];

/// Rank (family, window) cells from one or more metrics files by AUC,
/// breaking ties by sensitivity, then by input order.
pub fn compare_report(paths: &[PathBuf]) -> Result<Vec<RankedCell>> {
    if paths.is_empty() {
        return Err(Error::Config("compare needs at least one metrics file".into()));
    }
    let mut rows = Vec::new();
    for path in paths {
        let schema = |msg: String| Error::Validation(format!("schema mismatch in {}: {msg}", path.display()));
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let headers = reader.headers().map_err(|e| schema(e.to_string()))?.clone();
        let mut idx = [0usize; 7];
        for (slot, name) in idx.iter_mut().zip(COMPARE_COLUMNS) {
            *slot = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| schema(format!("missing column '{name}'")))?;
        }
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| schema(e.to_string()))?;
            let field = |k: usize| record.get(idx[k]).unwrap_or("");
            let num = |k: usize| -> Result<f64> {
                field(k)
                    .parse::<f64>()
                    .map_err(|_| schema(format!("row {}: '{}' is not a number", line + 2, field(k))))
            };
            rows.push(RankedCell {
                rank: 0,
                family: field(0).to_string(),
                window: field(1)
                    .parse()
                    .map_err(|_| schema(format!("row {}: bad window '{}'", line + 2, field(1))))?,
                auc: num(2)?,
                auc_lo: num(3)?,
                auc_hi: num(4)?,
                sensitivity: num(5)?,
                specificity: num(6)?,
                source: path.display().to_string(),
                best_in_family: false,
            });
        }
    }
    rows.sort_by(|a, b| b.auc.total_cmp(&a.auc).then(b.sensitivity.total_cmp(&a.sensitivity)));
    let mut seen = std::collections::BTreeSet::new();
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
        r.best_in_family = seen.insert(r.family.clone());
    }
    Ok(rows)
}

pub fn write_comparison<W: std::io::Write>(rows: &[RankedCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "rank",
        "family",
        "window",
        "auc",
        "auc_lo",
        "auc_hi",
        "sensitivity",
        "specificity",
        "best_in_family",
        "source",
    ])?;
    for r in rows {
        w.write_record([
            r.rank.to_string(),
            r.family.clone(),
            r.window.to_string(),
            r.auc.to_string(),
            r.auc_lo.to_string(),
            r.auc_hi.to_string(),
            r.sensitivity.to_string(),
            r.specificity.to_string(),
            r.best_in_family.to_string(),
            r.source.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::Serde(e.to_string()))
}
