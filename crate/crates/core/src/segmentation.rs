//! Fixed-size windowing, record-level splits and class balancing.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Label, Record};
use crate::error::{Error, Result};

/// A contiguous slice of one record with the record's label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub record_id: String,
    pub index: usize,
    pub start: usize,
    pub samples: Vec<f64>,
    pub label: Label,
    /// True for windows produced by SMOTE.
    #[serde(default)]
    pub synthetic: bool,
}

impl Window {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Split a labelled record into non-overlapping windows `[i*n, (i+1)*n)`.
/// The trailing remainder shorter than `n` is dropped.
pub fn segment(record: &Record, n: usize) -> Result<Vec<Window>> {
    if n < 2 {
        return Err(Error::Parameter(format!("window size {n} must be at least 2")));
    }
    let label = record
        .label()
        .ok_or_else(|| Error::Validation(format!("record {} has no label", record.id)))?;
    Ok(record
        .fhr
        .chunks_exact(n)
        .enumerate()
        .map(|(index, chunk)| Window {
            record_id: record.id.clone(),
            index,
            start: index * n,
            samples: chunk.to_vec(),
            label,
            synthetic: false,
        })
        .collect())
}

pub fn segment_all<'a>(
    records: impl IntoIterator<Item = &'a Record>,
    n: usize,
) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for r in records {
        out.extend(segment(r, n)?);
    }
    Ok(out)
}

/// How many records of each class go to the training side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitTarget {
    /// Train fraction per class, rounded to the nearest record.
    Ratios { train: f64, test: f64 },
    /// Exact training counts per class; the rest is test.
    Counts { case_train: usize, control_train: usize },
}

impl Default for SplitTarget {
    fn default() -> Self {
        SplitTarget::Ratios {
            train: 0.8,
            test: 0.2,
        }
    }
}

impl SplitTarget {
    fn train_count(&self, label: Label, available: usize) -> Result<usize> {
        let n = match *self {
            SplitTarget::Ratios { train, test } => {
                if !(train > 0.0 && test > 0.0) || ((train + test) - 1.0).abs() > 1e-9 {
                    return Err(Error::Split(format!(
                        "ratios ({train}, {test}) must be positive and sum to 1"
                    )));
                }
                ((available as f64) * train).round() as usize
            }
            SplitTarget::Counts {
                case_train,
                control_train,
            } => match label {
                Label::Case => case_train,
                Label::Control => control_train,
            },
        };
        // both sides need at least one record of every class
        if n == 0 || n >= available {
            return Err(Error::Split(format!(
                "{label} split of {available} records leaves a side empty (train {n})"
            )));
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_records: BTreeSet<String>,
    pub test_records: BTreeSet<String>,
    pub seed: u64,
    pub target: SplitTarget,
}

impl SplitPlan {
    pub fn is_disjoint(&self) -> bool {
        self.train_records.is_disjoint(&self.test_records)
    }

    /// Confirm every window descends from a record on its own side.
    pub fn check_no_leakage(&self, train: &[Window], test: &[Window]) -> Result<()> {
        if !self.is_disjoint() {
            return Err(Error::Split("train and test record sets overlap".into()));
        }
        if let Some(w) = train.iter().find(|w| !self.train_records.contains(&w.record_id)) {
            return Err(Error::Split(format!(
                "training window from non-training record {}",
                w.record_id
            )));
        }
        if let Some(w) = test.iter().find(|w| !self.test_records.contains(&w.record_id)) {
            return Err(Error::Split(format!(
                "test window from non-test record {}",
                w.record_id
            )));
        }
        Ok(())
    }
}

/// Stratified record-level split. Record ids of each class are sorted, then
/// shuffled under `seed`.
pub fn split_records(records: &[Record], target: SplitTarget, seed: u64) -> Result<SplitPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_records = BTreeSet::new();
    let mut test_records = BTreeSet::new();
    for label in [Label::Case, Label::Control] {
        let mut ids: Vec<&str> = records
            .iter()
            .filter(|r| r.label() == Some(label))
            .map(|r| r.id.as_str())
            .collect();
        if ids.len() < 2 {
            return Err(Error::Split(format!(
                "{label} class has {} record(s), need at least 2",
                ids.len()
            )));
        }
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let n_train = target.train_count(label, ids.len())?;
        train_records.extend(ids[..n_train].iter().map(|s| s.to_string()));
        test_records.extend(ids[n_train..].iter().map(|s| s.to_string()));
    }
    if records.iter().any(|r| r.label().is_none()) {
        return Err(Error::Split("unlabelled record in split input".into()));
    }
    Ok(SplitPlan {
        train_records,
        test_records,
        seed,
        target,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedSet {
    pub case_windows: Vec<Window>,
    pub control_windows: Vec<Window>,
    pub seed: u64,
}

impl BalancedSet {
    pub fn len(&self) -> usize {
        self.case_windows.len() + self.control_windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cases first, then controls.
    pub fn windows(&self) -> impl Iterator<Item = &Window> {
        self.case_windows.iter().chain(&self.control_windows)
    }

    pub fn into_windows(self) -> Vec<Window> {
        let mut all = self.case_windows;
        all.extend(self.control_windows);
        all
    }
}

/// Uniform sample of `k` items without replacement, kept in source order.
fn sample_in_order<T: Clone>(items: &[T], k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut picked = index::sample(rng, items.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i].clone()).collect()
}

/// Keep every case window and an equal-sized uniform sample of the pooled
/// control windows.
pub fn balance_undersample(
    case_windows: &[Window],
    control_windows: &[Window],
    seed: u64,
) -> Result<BalancedSet> {
    if control_windows.len() < case_windows.len() {
        return Err(Error::Balance(format!(
            "{} control windows cannot match {} case windows",
            control_windows.len(),
            case_windows.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(BalancedSet {
        case_windows: case_windows.to_vec(),
        control_windows: sample_in_order(control_windows, case_windows.len(), &mut rng),
        seed,
    })
}

/// Partition windows by label and balance them.
pub fn balance_windows(windows: &[Window], seed: u64) -> Result<BalancedSet> {
    let (cases, controls): (Vec<Window>, Vec<Window>) =
        windows.iter().cloned().partition(|w| w.label.is_case());
    balance_undersample(&cases, &controls, seed)
}

/// Uniform sample of `target` majority windows without replacement.
pub fn undersample_majority(majority: &[Window], target: usize, seed: u64) -> Result<Vec<Window>> {
    if target > majority.len() {
        return Err(Error::Parameter(format!(
            "target {target} exceeds {} majority windows",
            majority.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_in_order(majority, target, &mut rng))
}

/// Majority size implied by undersampling at `percent` against a minority of
/// `minority` windows: `minority * 100 / percent`.
pub fn undersample_target(minority: usize, percent: u32) -> Result<usize> {
    if percent == 0 || percent > 100 {
        return Err(Error::Parameter(format!(
            "undersampling percent {percent} must be in 1..=100"
        )));
    }
    Ok(minority * 100 / percent as usize)
}

/// A SMOTE output together with the pair and weight that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWindow {
    pub window: Window,
    pub source: usize,
    pub neighbor: usize,
    pub lambda: f64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest other minority windows of each window,
/// ties broken by index.
pub fn nearest_neighbors(points: &[Window], k: usize) -> Vec<Vec<usize>> {
    (0..points.len())
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| (squared_distance(&points[i].samples, &points[j].samples), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// SMOTE with provenance. For each minority window `x`, `amount_percent/100`
/// synthetic windows `x + λ (y - x)` are produced with `y` drawn uniformly
/// from the `k` nearest minority neighbours of `x` and `λ ~ U[0, 1)`.
pub fn smote_with_provenance(
    minority: &[Window],
    k: usize,
    amount_percent: u32,
    seed: u64,
) -> Result<Vec<SyntheticWindow>> {
    if k == 0 || k >= minority.len() {
        return Err(Error::Parameter(format!(
            "SMOTE needs 1 <= k < minority size, got k={k} with {} windows",
            minority.len()
        )));
    }
    if amount_percent == 0 || !amount_percent.is_multiple_of(100) {
        return Err(Error::Parameter(format!(
            "SMOTE amount {amount_percent}% must be a positive multiple of 100"
        )));
    }
    let width = minority[0].len();
    if minority.iter().any(|w| w.len() != width) {
        return Err(Error::Shape("SMOTE minority windows differ in length".into()));
    }
    let per_source = (amount_percent / 100) as usize;
    let neighbors = nearest_neighbors(minority, k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(minority.len() * per_source);
    for (source, x) in minority.iter().enumerate() {
        for _ in 0..per_source {
            let neighbor = neighbors[source][rng.random_range(0..k)];
            let lambda: f64 = rng.random();
            let y = &minority[neighbor].samples;
            let samples = x
                .samples
                .iter()
                .zip(y)
                .map(|(a, b)| a + lambda * (b - a))
                .collect();
            out.push(SyntheticWindow {
                window: Window {
                    record_id: x.record_id.clone(),
                    index: x.index,
                    start: x.start,
                    samples,
                    label: x.label,
                    synthetic: true,
                },
                source,
                neighbor,
                lambda,
            });
        }
    }
    Ok(out)
}

pub fn smote(minority: &[Window], k: usize, amount_percent: u32, seed: u64) -> Result<Vec<Window>> {
    Ok(smote_with_provenance(minority, k, amount_percent, seed)?
        .into_iter()
        .map(|s| s.window)
        .collect())
}

/// Write windows as CSV: `record_id,index,label,s0..s{n-1}`.
pub fn write_windows_csv<W: Write>(windows: &[Window], out: W) -> Result<()> {
    let n = windows.first().map_or(0, Window::len);
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["record_id".to_string(), "index".into(), "label".into()];
    header.extend((0..n).map(|i| format!("s{i}")));
    writer.write_record(&header)?;
    for w in windows {
        if w.len() != n {
            return Err(Error::Shape("windows in one export must share a length".into()));
        }
        let mut row = vec![w.record_id.clone(), w.index.to_string(), w.label.to_string()];
        row.extend(w.samples.iter().map(|v| v.to_string()));
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io("<windows csv>", e))?;
    Ok(())
}

/// Read windows written by [`write_windows_csv`]. `start` is rebuilt from
/// `index` and the row width.
pub fn read_windows_csv<R: std::io::Read>(input: R) -> Result<Vec<Window>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "record_id" || &headers[1] != "index" || &headers[2] != "label"
    {
        return Err(Error::Format {
            line: 1,
            message: "expected header record_id,index,label,s0,...".into(),
        });
    }
    let n = headers.len() - 3;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let bad = |what: &str| Error::Row {
            row: i + 1,
            message: format!("bad {what}"),
        };
        let index: usize = row[1].parse().map_err(|_| bad("index"))?;
        let label: Label = row[2].parse().map_err(|_| bad("label"))?;
        let samples = row
            .iter()
            .skip(3)
            .map(|c| c.parse::<f64>().map_err(|_| bad("sample")))
            .collect::<Result<Vec<_>>>()?;
        out.push(Window {
            record_id: row[0].to_string(),
            index,
            start: index * n,
            samples,
            label,
            synthetic: false,
        });
    }
    Ok(out)
}
