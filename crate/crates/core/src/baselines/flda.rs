//! Fisher's linear discriminant with a two-Gaussian score on the projection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataio::Label;
use crate::error::{Error, Result};
use crate::nn::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FldaParams {
    /// Added to the within-class scatter diagonal before solving.
    pub ridge: f64,
}

impl Default for FldaParams {
    fn default() -> Self {
        FldaParams { ridge: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FldaModel {
    /// Oriented so that cases project higher than controls.
    pub weights: Vec<f64>,
    /// Midpoint of the projected class means.
    pub threshold: f64,
    pub mean_case: f64,
    pub mean_control: f64,
    pub var_case: f64,
    pub var_control: f64,
}

impl FldaModel {
    pub fn project(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum()
    }

    fn pooled_variance(&self) -> f64 {
        let v = 0.5 * (self.var_case + self.var_control);
        let gap = self.mean_case - self.mean_control;
        v.max(1e-12 * gap * gap).max(f64::MIN_POSITIVE)
    }

    /// P(case) from equal-variance Gaussians on the projection, equal priors.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let s = self.project(x);
        let llr = (self.mean_case - self.mean_control) * (s - self.threshold) / self.pooled_variance();
        sigmoid(llr)
    }
}

fn class_stats(xs: &[Vec<f64>], labels: &[Label], class: Label, d: usize) -> (DVector<f64>, usize) {
    let mut mean = DVector::zeros(d);
    let mut n = 0;
    for (x, _) in xs.iter().zip(labels).filter(|(_, l)| **l == class) {
        mean += DVector::from_column_slice(x);
        n += 1;
    }
    (mean / n.max(1) as f64, n)
}

/// `w ∝ (S_w + ridge I)^{-1} (μ_case − μ_control)`.
pub fn flda_fit(xs: &[Vec<f64>], labels: &[Label], params: &FldaParams) -> Result<FldaModel> {
    if xs.len() != labels.len() || xs.is_empty() {
        return Err(Error::Parameter("FLDA needs matching non-empty data".into()));
    }
    let d = xs[0].len();
    if d == 0 || xs.iter().any(|x| x.len() != d) {
        return Err(Error::Shape("FLDA inputs must share a non-zero width".into()));
    }
    let (mu1, n1) = class_stats(xs, labels, Label::Case, d);
    let (mu0, n0) = class_stats(xs, labels, Label::Control, d);
    if n1 == 0 || n0 == 0 {
        return Err(Error::Parameter("FLDA needs both classes".into()));
    }

    let centered = DMatrix::from_fn(xs.len(), d, |i, j| {
        let mu = if labels[i].is_case() { &mu1 } else { &mu0 };
        xs[i][j] - mu[j]
    });
    let mut scatter = centered.tr_mul(&centered);
    for k in 0..d {
        scatter[(k, k)] += params.ridge;
    }
    let diff = &mu1 - &mu0;
    let w = match scatter.clone().cholesky() {
        Some(ch) => ch.solve(&diff),
        None => scatter
            .lu()
            .solve(&diff)
            .ok_or_else(|| Error::Numeric("within-class scatter is singular".into()))?,
    };
    if !w.iter().all(|v| v.is_finite()) || w.iter().all(|&v| v == 0.0) {
        return Err(Error::Numeric("degenerate discriminant direction".into()));
    }
    let mut weights: Vec<f64> = w.iter().copied().collect();
    if weights.iter().zip(diff.iter()).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
        weights.iter_mut().for_each(|v| *v = -*v);
    }

    let mut model = FldaModel {
        weights,
        threshold: 0.0,
        mean_case: 0.0,
        mean_control: 0.0,
        var_case: 0.0,
        var_control: 0.0,
    };
    let proj: Vec<f64> = xs.iter().map(|x| model.project(x)).collect();
    let stats = |class: Label| {
        let v: Vec<f64> = proj
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == class)
            .map(|(p, _)| *p)
            .collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|p| (p - m).powi(2)).sum::<f64>() / v.len() as f64;
        (m, var)
    };
    (model.mean_case, model.var_case) = stats(Label::Case);
    (model.mean_control, model.var_control) = stats(Label::Control);
    model.threshold = 0.5 * (model.mean_case + model.mean_control);
    Ok(model)
}
