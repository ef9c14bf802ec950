//! Python bindings. Signals, windows and scores cross the boundary as plain
//! lists of floats; labels as the strings "case" and "control".

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ctgwin::dataio::{self, Delivery, Label};
use ctgwin::experiment::{self, ExperimentConfig};
use ctgwin::figo::{self, FigoParams};
use ctgwin::metrics::{self, EvalOptions, EvalReport, PositiveClass, ScoredSet};
use ctgwin::models::{self, Family, FitOptions, Normalization};
use ctgwin::preprocess::{self, Band, RepairConfig};
use ctgwin::{segmentation, synthetic, Error, ErrorKind};

fn to_py(e: Error) -> PyErr {
    match (&e, e.kind()) {
        (Error::Io { .. }, _) => PyOSError::new_err(e.to_string()),
        (_, ErrorKind::Config) => PyValueError::new_err(e.to_string()),
        (_, ErrorKind::Data) => PyValueError::new_err(e.to_string()),
        (_, ErrorKind::Numeric) => PyRuntimeError::new_err(e.to_string()),
    }
}

fn labels_from(labels: &[String]) -> PyResult<Vec<Label>> {
    labels.iter().map(|l| l.parse().map_err(to_py)).collect()
}

/// A fetal heart-rate record sampled at 4 Hz.
#[pyclass(name = "Record", module = "ctgwin_py", frozen)]
struct PyRecord {
    inner: dataio::Record,
}

#[pymethods]
impl PyRecord {
    #[new]
    #[pyo3(signature = (id, fhr, delivery=None, ph=None))]
    fn new(id: String, fhr: Vec<f64>, delivery: Option<&str>, ph: Option<f64>) -> PyResult<Self> {
        let mut inner = dataio::Record::new(id, fhr);
        if let (Some(d), Some(ph)) = (delivery, ph) {
            let d: Delivery = d.parse().map_err(to_py)?;
            inner.meta = Some(dataio::RecordMeta::new(d, ph).map_err(to_py)?);
        }
        Ok(PyRecord { inner })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn fhr(&self) -> Vec<f64> {
        self.inner.fhr.clone()
    }

    /// "case", "control", or None for an unlabelled record.
    #[getter]
    fn label(&self) -> Option<String> {
        self.inner.label().map(|l| l.to_string())
    }

    #[getter]
    fn duration_secs(&self) -> f64 {
        self.inner.duration_secs()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Record(id={:?}, samples={})", self.inner.id, self.inner.len())
    }
}

#[pyfunction]
fn parse_record(text: &str, id: &str) -> PyResult<PyRecord> {
    Ok(PyRecord {
        inner: dataio::parse_record(text, id).map_err(to_py)?,
    })
}

#[pyfunction]
fn read_record(path: PathBuf, id: &str) -> PyResult<PyRecord> {
    Ok(PyRecord {
        inner: dataio::read_record(&path, id).map_err(to_py)?,
    })
}

/// Label from delivery mode and pH; returns (label, annotation).
#[pyfunction]
fn label_record(delivery: &str, ph: f64) -> PyResult<(String, String)> {
    let d: Delivery = delivery.parse().map_err(to_py)?;
    let (label, annotation) = dataio::label_record(d, ph).map_err(to_py)?;
    Ok((label.to_string(), format!("{annotation:?}")))
}

#[pyfunction]
#[pyo3(signature = (fhr, band_low=50.0, band_high=210.0))]
fn repair<'py>(py: Python<'py>, fhr: Vec<f64>, band_low: f64, band_high: f64) -> PyResult<Bound<'py, PyDict>> {
    let config = RepairConfig {
        band: Band::new(band_low, band_high).map_err(to_py)?,
        ..RepairConfig::default()
    };
    let report = preprocess::repair("python", &fhr, &config).map_err(to_py)?;
    let spans: Vec<(usize, usize)> = report.signal.repaired_spans.iter().map(|g| (g.start, g.end)).collect();
    let long: Vec<(usize, usize)> = report.long_gaps.iter().map(|g| (g.start, g.end)).collect();
    let d = PyDict::new(py);
    d.set_item("samples", report.signal.samples)?;
    d.set_item("repaired_spans", spans)?;
    d.set_item("quality", report.signal.quality)?;
    d.set_item("block_quality", report.block_quality)?;
    d.set_item("long_gaps", long)?;
    d.set_item("low_quality", report.low_quality)?;
    Ok(d)
}

/// Non-overlapping windows of `n` samples; a trailing remainder is dropped.
#[pyfunction]
fn segment(fhr: Vec<f64>, n: usize) -> PyResult<Vec<Vec<f64>>> {
    let mut record = dataio::Record::new("python", fhr);
    // windows carry a label; it is discarded here
    record.meta = Some(dataio::RecordMeta::new(Delivery::Vaginal, 7.3).map_err(to_py)?);
    let windows = segmentation::segment(&record, n).map_err(to_py)?;
    Ok(windows.into_iter().map(|w| w.samples).collect())
}

#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<String>) -> PyResult<f64> {
    let set = ScoredSet::new(scores, labels_from(&labels)?).map_err(to_py)?;
    metrics::auc_rank(&set).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (p, n, level=0.95))]
fn wald_ci(p: f64, n: usize, level: f64) -> (f64, f64) {
    metrics::wald_ci(p, n, level)
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (k, v) in EvalReport::CSV_HEADER.iter().zip(r.csv_fields()) {
        match v.parse::<f64>() {
            Ok(x) => d.set_item(*k, x)?,
            Err(_) => d.set_item(*k, v)?,
        }
    }
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (scores, labels, threshold=0.5, positive="case"))]
fn evaluate<'py>(
    py: Python<'py>,
    scores: Vec<f64>,
    labels: Vec<String>,
    threshold: f64,
    positive: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let set = ScoredSet::new(scores, labels_from(&labels)?).map_err(to_py)?;
    let options = EvalOptions {
        threshold,
        positive: positive.parse::<PositiveClass>().map_err(to_py)?,
        ..EvalOptions::default()
    };
    let report = metrics::evaluate(&set, &options).map_err(to_py)?;
    report_dict(py, &report)
}

/// Architecture and hyperparameters of one model family at one window size.
#[pyclass(name = "ModelSpec", module = "ctgwin_py", frozen)]
struct PyModelSpec {
    inner: models::ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    #[staticmethod]
    #[pyo3(signature = (family, window_size, seed=0))]
    fn preset(family: &str, window_size: usize, seed: u64) -> PyResult<Self> {
        let family: Family = family.parse().map_err(to_py)?;
        let inner = models::preset(family, window_size).map_err(to_py)?.with_seed(seed);
        Ok(PyModelSpec { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyModelSpec {
            inner: models::ModelSpec::from_toml(text).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py)
    }

    #[getter]
    fn family(&self) -> String {
        self.inner.family.to_string()
    }

    #[getter]
    fn window_size(&self) -> usize {
        self.inner.window_size
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.inner.input_shape()
    }

    fn __repr__(&self) -> String {
        format!("ModelSpec(family={:?}, window_size={})", self.inner.family.as_str(), self.inner.window_size)
    }
}

/// A fitted classifier; `predict` returns P(case) per window.
#[pyclass(name = "Model", module = "ctgwin_py", frozen)]
struct PyModel {
    inner: models::TrainedModel,
}

#[pymethods]
impl PyModel {
    fn predict(&self, py: Python<'_>, windows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        py.detach(|| self.inner.predict_batch(&windows)).map_err(to_py)
    }

    #[getter]
    fn family(&self) -> String {
        self.inner.family().to_string()
    }

    #[getter]
    fn window_size(&self) -> usize {
        self.inner.spec.window_size
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: models::TrainedModel::from_json(text).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: models::TrainedModel::load(&path).map_err(to_py)?,
        })
    }
}

/// Fit `spec` to windows; returns the model and, for networks, the
/// per-epoch history as a list of dicts.
#[pyfunction]
#[pyo3(signature = (spec, windows, labels, train_seed=0, normalization="train_zscore", epochs=None))]
fn fit<'py>(
    py: Python<'py>,
    spec: &PyModelSpec,
    windows: Vec<Vec<f64>>,
    labels: Vec<String>,
    train_seed: u64,
    normalization: &str,
    epochs: Option<usize>,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let labels = labels_from(&labels)?;
    let mut spec = spec.inner.clone();
    if let (Some(p), Some(e)) = (spec.net_params_mut(), epochs) {
        p.epochs = e;
    }
    let options = FitOptions {
        normalization: normalization.parse::<Normalization>().map_err(to_py)?,
        train_seed,
    };
    let (model, report) = py.detach(|| models::fit(&spec, &windows, &labels, &options)).map_err(to_py)?;
    let mut history = Vec::new();
    for m in report.iter().flat_map(|r| &r.history) {
        let d = PyDict::new(py);
        d.set_item("epoch", m.epoch)?;
        d.set_item("train_logloss", m.train_logloss)?;
        d.set_item("val_logloss", m.val_logloss)?;
        d.set_item("train_auc", m.train_auc)?;
        d.set_item("val_auc", m.val_auc)?;
        history.push(d);
    }
    Ok((PyModel { inner: model }, history))
}

#[pyfunction]
fn figo_summary<'py>(py: Python<'py>, fhr: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let s = figo::summarize(&fhr, &FigoParams::default()).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("vbl", s.vbl)?;
    d.set_item("rbl", s.rbl)?;
    d.set_item("rbl_fallback", s.rbl_fallback)?;
    d.set_item("accelerations", s.accelerations)?;
    d.set_item("decelerations", s.decelerations)?;
    Ok(d)
}

/// Run a full experiment from a config file. Returns one dict per
/// (family, window) cell with the balanced test metrics.
#[pyfunction]
#[pyo3(signature = (config_path, output=None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config_path: PathBuf,
    output: Option<PathBuf>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut config = ExperimentConfig::load(&config_path).map_err(to_py)?;
    if let Some(out) = output {
        config.output = out;
    }
    let outcome = py.detach(|| experiment::run_experiment(&config)).map_err(to_py)?;
    outcome
        .cells
        .iter()
        .map(|c| {
            let d = report_dict(py, &c.balanced)?;
            d.set_item("family", c.family.to_string())?;
            d.set_item("window", c.window)?;
            Ok(d)
        })
        .collect()
}

/// Write a seeded synthetic corpus and return the manifest path.
#[pyfunction]
#[pyo3(signature = (dir, cases, controls, length, seed=0))]
fn write_synthetic_corpus(dir: PathBuf, cases: usize, controls: usize, length: usize, seed: u64) -> PyResult<PathBuf> {
    synthetic::write_corpus(&dir, cases, controls, length, seed).map_err(to_py)?;
    Ok(dir.join("manifest.csv"))
}

#[pymodule]
fn ctgwin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRecord>()?;
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(parse_record, m)?)?;
    m.add_function(wrap_pyfunction!(read_record, m)?)?;
    m.add_function(wrap_pyfunction!(label_record, m)?)?;
    m.add_function(wrap_pyfunction!(repair, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(wald_ci, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(figo_summary, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic_corpus, m)?)?;
    m.add("WINDOW_SIZES", models::STUDY_WINDOW_SIZES.to_vec())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
