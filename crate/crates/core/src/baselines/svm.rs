//! Soft-margin RBF SVM trained by SMO, with Platt-scaled probabilities.
//!
//! The dual `min ½ αᵀQα − eᵀα` s.t. `0 ≤ α ≤ C`, `yᵀα = 0` is solved with
//! maximal-violating-pair working sets (second-order choice of the second
//! index). Cases are labelled `+1`.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Label;
use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub gamma: f64,
    pub c: f64,
    /// Stop once the maximal KKT violation drops below this.
    pub tol: f64,
    pub platt: bool,
    /// `None`: `max(10^7, 100 n)` iterations.
    pub max_iter: Option<usize>,
    pub cache_mb: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            gamma: 0.3333,
            c: 1.0,
            tol: 1e-3,
            platt: true,
            max_iter: None,
            cache_mb: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// `max violation - min violation` at exit.
    pub kkt_gap: f64,
}

/// `P(case | f) = 1 / (1 + exp(a f + b))`; `a < 0` for a useful fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platt {
    pub a: f64,
    pub b: f64,
}

impl Platt {
    pub fn probability(&self, f: f64) -> f64 {
        let z = self.a * f + self.b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i y_i` per support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    pub platt: Option<Platt>,
    pub diagnostics: SmoDiagnostics,
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

impl SvmModel {
    /// Kernel decision value `Σ α_i y_i K(sv_i, x) + b`.
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coef)
            .map(|(sv, c)| c * rbf(sv, x, self.gamma))
            .sum::<f64>()
            + self.bias
    }

    /// Calibrated P(case); without calibration, a logistic of the decision value.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let f = self.decision(x);
        match self.platt {
            Some(p) => p.probability(f),
            None => Platt { a: -1.0, b: 0.0 }.probability(f),
        }
    }
}

/// Bounded FIFO cache of kernel rows.
struct KernelRows<'a> {
    xs: &'a [Vec<f64>],
    gamma: f64,
    rows: Vec<Option<Vec<f64>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelRows<'a> {
    fn new(xs: &'a [Vec<f64>], gamma: f64, cache_mb: usize) -> Self {
        let row_bytes = (xs.len() * 8).max(1);
        let capacity = ((cache_mb << 20) / row_bytes).max(2);
        KernelRows {
            xs,
            gamma,
            rows: vec![None; xs.len()],
            order: VecDeque::new(),
            capacity,
        }
    }

    fn ensure(&mut self, i: usize) {
        if self.rows[i].is_some() {
            return;
        }
        if self.order.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.rows[old] = None;
            }
        }
        let xi = &self.xs[i];
        let gamma = self.gamma;
        let row = self.xs.iter().map(|xj| rbf(xi, xj, gamma)).collect();
        self.rows[i] = Some(row);
        self.order.push_back(i);
    }

    fn pair(&mut self, i: usize, j: usize) -> (&[f64], &[f64]) {
        self.ensure(i);
        self.ensure(j);
        (
            self.rows[i].as_deref().expect("cached"),
            self.rows[j].as_deref().expect("cached"),
        )
    }

    fn row(&mut self, i: usize) -> &[f64] {
        self.ensure(i);
        self.rows[i].as_deref().expect("cached")
    }
}

struct DualSolution {
    alpha: Vec<f64>,
    bias: f64,
    diagnostics: SmoDiagnostics,
}

fn solve_dual(xs: &[Vec<f64>], y: &[f64], params: &SvmParams) -> DualSolution {
    let n = xs.len();
    let c = params.c;
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut kernel = KernelRows::new(xs, params.gamma, params.cache_mb);
    let max_iter = params.max_iter.unwrap_or_else(|| 10_000_000usize.max(100 * n));
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt < 0.0 && a < c) || (yt > 0.0 && a > 0.0);

    let mut iterations = 0;
    let mut gap;
    loop {
        // i: maximal -y G over I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i_sel = Some(t);
            }
        }
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            if in_low(alpha[t], y[t]) {
                gmin = gmin.min(-y[t] * grad[t]);
            }
        }
        gap = gmax - gmin;
        let Some(i) = i_sel else { break };
        if gap < params.tol || iterations >= max_iter {
            break;
        }

        // j: second-order choice among violators in I_low
        let ki = kernel.row(i).to_vec();
        let mut best = f64::INFINITY;
        let mut j_sel = None;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let b = gmax + y[t] * grad[t];
            if b > 0.0 {
                let a = (ki[i] + 1.0 - 2.0 * ki[t]).max(TAU);
                let obj = -(b * b) / a;
                if obj <= best {
                    best = obj;
                    j_sel = Some(t);
                }
            }
        }
        let Some(j) = j_sel else { break };
        iterations += 1;

        let (ki, kj) = kernel.pair(i, j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let kii = ki[i];
        let kjj = kj[j];
        let kij = ki[j];
        if y[i] != y[j] {
            let quad = (kii + kjj - 2.0 * kij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (kii + kjj - 2.0 * kij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }

    // bias from free vectors, else the middle of the feasible range
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    let converged = gap < params.tol;
    if !converged {
        log::warn!("SMO stopped after {iterations} iterations with KKT gap {gap:.3e}");
    }
    DualSolution {
        alpha,
        bias: -rho,
        diagnostics: SmoDiagnostics {
            iterations,
            converged,
            kkt_gap: gap,
        },
    }
}

/// Platt's sigmoid fit by Newton's method with backtracking, on
/// prior-smoothed targets.
pub fn fit_platt(decisions: &[f64], positive: &[bool]) -> Platt {
    let prior1 = positive.iter().filter(|&&p| p).count() as f64;
    let prior0 = positive.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();

    let objective = |a: f64, b: f64| -> f64 {
        decisions
            .iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (1.0 + (-z).exp()).ln()
                } else {
                    (ti - 1.0) * z + (1.0 + z.exp()).ln()
                }
            })
            .sum()
    };

    let (mut a, mut b) = (0.0, ((prior0 + 1.0) / (prior1 + 1.0)).ln());
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&f, &ti) in decisions.iter().zip(&t) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    Platt { a, b }
}

pub fn svm_fit(xs: &[Vec<f64>], labels: &[Label], params: &SvmParams) -> Result<SvmModel> {
    if xs.len() != labels.len() || xs.is_empty() {
        return Err(Error::Parameter("SVM needs matching non-empty data".into()));
    }
    let d = xs[0].len();
    if xs.iter().any(|x| x.len() != d) {
        return Err(Error::Shape("SVM inputs must share a width".into()));
    }
    if !labels.iter().any(|l| l.is_case()) || labels.iter().all(|l| l.is_case()) {
        return Err(Error::Parameter("SVM needs both classes".into()));
    }
    if !(params.c > 0.0 && params.gamma > 0.0 && params.tol > 0.0) {
        return Err(Error::Parameter("SVM needs positive C, gamma and tolerance".into()));
    }
    let y: Vec<f64> = labels.iter().map(|l| if l.is_case() { 1.0 } else { -1.0 }).collect();
    let sol = solve_dual(xs, &y, params);

    let (support_vectors, dual_coef): (Vec<Vec<f64>>, Vec<f64>) = sol
        .alpha
        .iter()
        .zip(xs)
        .zip(&y)
        .filter(|((&a, _), _)| a > 0.0)
        .map(|((&a, x), &yi)| (x.clone(), a * yi))
        .unzip();
    let mut model = SvmModel {
        support_vectors,
        dual_coef,
        bias: sol.bias,
        gamma: params.gamma,
        c: params.c,
        platt: None,
        diagnostics: sol.diagnostics,
    };
    if params.platt {
        let decisions: Vec<f64> = xs.par_iter().map(|x| model.decision(x)).collect();
        let positive: Vec<bool> = labels.iter().map(|l| l.is_case()).collect();
        model.platt = Some(fit_platt(&decisions, &positive));
    }
    Ok(model)
}

/// Full dual variables for inspection: `α_i` per training example.
pub fn svm_dual(xs: &[Vec<f64>], labels: &[Label], params: &SvmParams) -> (Vec<f64>, f64, SmoDiagnostics) {
    let y: Vec<f64> = labels.iter().map(|l| if l.is_case() { 1.0 } else { -1.0 }).collect();
    let sol = solve_dual(xs, &y, params);
    (sol.alpha, sol.bias, sol.diagnostics)
}
