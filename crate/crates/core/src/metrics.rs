//! Sensitivity/specificity, rank AUC, Wald intervals, logloss and ROC curves.
//!
//! The positive class is `case` unless reporting is flipped with
//! [`PositiveClass::Control`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataio::Label;
use crate::error::{Error, Result};
use crate::nn::network::PROB_CLIP;

/// Predicted P(case) per window with the true labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<Label>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Validation(format!("score {s} outside [0, 1]")));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_case(&self) -> usize {
        self.labels.iter().filter(|l| l.is_case()).count()
    }

    pub fn n_control(&self) -> usize {
        self.len() - self.n_case()
    }

    /// Treat controls as the positive class: scores become `1 - p` and labels
    /// swap.
    pub fn flipped(&self) -> ScoredSet {
        ScoredSet {
            scores: self.scores.iter().map(|s| 1.0 - s).collect(),
            labels: self.labels.iter().map(|l| l.flipped()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn sensitivity(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    pub fn specificity(&self) -> f64 {
        self.tn as f64 / (self.tn + self.fp) as f64
    }
}

/// Predict case iff `score >= threshold`.
pub fn confusion(set: &ScoredSet, threshold: f64) -> Result<Confusion> {
    if set.is_empty() {
        return Err(Error::Validation("confusion of an empty set".into()));
    }
    let mut c = Confusion::default();
    for (&s, &l) in set.scores.iter().zip(&set.labels) {
        match (s >= threshold, l.is_case()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// 1-based ranks with ties sharing their mean rank.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Rank-sum AUC over arbitrary real scores:
/// `(S0 - n1 (n1 + 1) / 2) / (n1 n2)` with `S0` the sum of case mid-ranks.
pub fn auc_from_scores(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let n1 = labels.iter().filter(|l| l.is_case()).count();
    let n2 = labels.len() - n1;
    if n1 == 0 || n2 == 0 {
        return Err(Error::UndefinedAuc(format!(
            "{n1} case and {n2} control scores; both classes are required"
        )));
    }
    let ranks = mid_ranks(scores);
    let s0: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, l)| l.is_case())
        .map(|(r, _)| r)
        .sum();
    let (n1, n2) = (n1 as f64, n2 as f64);
    Ok((s0 - n1 * (n1 + 1.0) / 2.0) / (n1 * n2))
}

pub fn auc_rank(set: &ScoredSet) -> Result<f64> {
    auc_from_scores(&set.scores, &set.labels)
}

/// Two-sided standard-normal quantile for a confidence `level`
/// (1.959964 for 0.95).
pub fn normal_quantile(level: f64) -> f64 {
    let alpha = 1.0 - level;
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// Interval estimate of a proportion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// `0.80(0.75,0.85)`
    pub fn table_cell(&self) -> String {
        format!("{:.2}({:.2},{:.2})", self.point, self.lo, self.hi)
    }
}

/// Wald interval `p ± k sqrt(p (1 - p) / n)`, clamped to `[0, 1]`.
pub fn wald_ci(p: f64, n: usize, level: f64) -> (f64, f64) {
    let k = normal_quantile(level);
    let half = k * (p * (1.0 - p) / n.max(1) as f64).sqrt();
    ((p - half).clamp(0.0, 1.0), (p + half).clamp(0.0, 1.0))
}

fn interval(p: f64, n: usize, level: f64) -> Interval {
    let (lo, hi) = wald_ci(p, n, level);
    Interval { point: p, lo, hi }
}

/// Mean binary cross-entropy with scores clipped to `[1e-15, 1 - 1e-15]`.
pub fn logloss(set: &ScoredSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Validation("logloss of an empty set".into()));
    }
    let total: f64 = set
        .scores
        .iter()
        .zip(&set.labels)
        .map(|(&p, l)| {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            let y = l.target();
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(-total / set.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC points by descending threshold, from `(0, 0)` to `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
            .sum()
    }

    /// Point maximizing `tpr - fpr`; the first such point on ties.
    pub fn youden(&self) -> RocPoint {
        *self
            .points
            .iter()
            .skip(1)
            .fold(None::<&RocPoint>, |best, p| match best {
                Some(b) if b.tpr - b.fpr >= p.tpr - p.fpr => Some(b),
                _ => Some(p),
            })
            .unwrap_or(&self.points[0])
    }
}

/// Threshold sweep over every distinct score, preceded by an infinite
/// threshold that yields `(0, 0)`.
pub fn roc_curve(set: &ScoredSet) -> Result<RocCurve> {
    let n_pos = set.n_case();
    let n_neg = set.n_control();
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(
            "ROC curve needs both classes".into(),
        ));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[b].total_cmp(&set.scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = set.scores[order[i]];
        while i < order.len() && set.scores[order[i]] == s {
            if set.labels[order[i]].is_case() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: s,
        });
    }
    Ok(RocCurve { points })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveClass {
    #[default]
    Case,
    Control,
}

impl std::str::FromStr for PositiveClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "case" => Ok(PositiveClass::Case),
            "control" => Ok(PositiveClass::Control),
            other => Err(Error::Config(format!(
                "positive class must be case or control, got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub threshold: f64,
    pub level: f64,
    pub positive: PositiveClass,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: 0.5,
            level: 0.95,
            positive: PositiveClass::Case,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sensitivity: Interval,
    pub specificity: Interval,
    /// Interval width uses `min(n_case, n_control)` as the sample size.
    pub auc: Interval,
    pub logloss: f64,
    pub counts: Confusion,
    /// Windows of the positive class.
    pub n_case: usize,
    pub n_control: usize,
    pub youden: RocPoint,
    pub positive: PositiveClass,
}

impl EvalReport {
    /// Column names matching [`EvalReport::csv_fields`].
    pub const CSV_HEADER: [&'static str; 19] = [
        "n_case",
        "n_control",
        "tp",
        "fp",
        "tn",
        "fn",
        "sensitivity",
        "sensitivity_lo",
        "sensitivity_hi",
        "specificity",
        "specificity_lo",
        "specificity_hi",
        "auc",
        "auc_lo",
        "auc_hi",
        "logloss",
        "sens_ci",
        "spec_ci",
        "auc_ci",
    ];

    pub fn csv_fields(&self) -> Vec<String> {
        let c = &self.counts;
        vec![
            self.n_case.to_string(),
            self.n_control.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
            self.sensitivity.point.to_string(),
            self.sensitivity.lo.to_string(),
            self.sensitivity.hi.to_string(),
            self.specificity.point.to_string(),
            self.specificity.lo.to_string(),
            self.specificity.hi.to_string(),
            self.auc.point.to_string(),
            self.auc.lo.to_string(),
            self.auc.hi.to_string(),
            self.logloss.to_string(),
            self.sensitivity.table_cell(),
            self.specificity.table_cell(),
            self.auc.table_cell(),
        ]
    }

    /// `W=200, 0.80(0.75,0.85), ...` in the Window/Sens/Spec/AUC table layout.
    pub fn table_row(&self, window: usize) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "W={window},{},{},{}",
            self.sensitivity.table_cell(),
            self.specificity.table_cell(),
            self.auc.table_cell()
        );
        s
    }
}

pub fn evaluate(set: &ScoredSet, options: &EvalOptions) -> Result<EvalReport> {
    let view = match options.positive {
        PositiveClass::Case => set.clone(),
        PositiveClass::Control => set.flipped(),
    };
    let counts = confusion(&view, options.threshold)?;
    let n_case = view.n_case();
    let n_control = view.n_control();
    let auc = auc_rank(&view)?;
    let roc = roc_curve(&view)?;
    Ok(EvalReport {
        sensitivity: interval(counts.sensitivity(), n_case, options.level),
        specificity: interval(counts.specificity(), n_control, options.level),
        auc: interval(auc, n_case.min(n_control), options.level),
        logloss: logloss(&view)?,
        counts,
        n_case,
        n_control,
        youden: roc.youden(),
        positive: options.positive,
    })
}
