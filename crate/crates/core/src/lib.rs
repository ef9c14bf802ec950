//! Windowed fetal heart-rate classification: record ingestion, signal
//! repair, windowing and balancing, a from-scratch 1-D CNN engine, classical
//! baselines, evaluation metrics and FIGO-style descriptors.

pub mod baselines;
pub mod dataio;
pub mod error;
pub mod experiment;
pub mod figo;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod preprocess;
pub mod seed;
pub mod segmentation;
pub mod synthetic;

pub use dataio::{label_record, parse_record, Annotation, Delivery, Label, Record, RecordMeta};
pub use error::{Error, ErrorKind, Result};
pub use experiment::{compare_report, run_experiment, Balancing, ExperimentConfig};
pub use metrics::{auc_rank, evaluate, logloss, roc_curve, wald_ci, EvalOptions, EvalReport, ScoredSet};
pub use models::{fit, preset_baseline, preset_cnn1d, preset_mlp, Family, FitOptions, ModelSpec, TrainedModel};
pub use preprocess::{repair, Band, RepairConfig};
pub use segmentation::{balance_undersample, segment, smote, split_records, SplitPlan, SplitTarget, Window};
