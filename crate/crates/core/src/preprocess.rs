//! Gap detection and monotone cubic Hermite repair of FHR signals.

use serde::{Deserialize, Serialize};

use crate::dataio::{MISSING, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

/// Inclusive physiological FHR range in bpm. Samples outside it are treated
/// as noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: f64,
    pub high: f64,
}

impl Default for Band {
    fn default() -> Self {
        Band {
            low: 50.0,
            high: 210.0,
        }
    }
}

impl Band {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        let band = Band { low, high };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<()> {
        if self.low.is_nan() || self.high.is_nan() || self.low >= self.high {
            return Err(Error::Parameter(format!(
                "band low {} must be below high {}",
                self.low, self.high
            )));
        }
        Ok(())
    }

    pub fn is_valid(&self, sample: f64) -> bool {
        sample != MISSING && sample >= self.low && sample <= self.high
    }
}

/// Half-open run `[start, end)` of invalid samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapSpan {
    pub start: usize,
    pub end: usize,
}

impl GapSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / SAMPLE_RATE_HZ
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanSignal {
    pub samples: Vec<f64>,
    pub repaired_spans: Vec<GapSpan>,
    /// Fraction of samples that were valid before repair.
    pub quality: f64,
}

/// Maximal runs of missing or out-of-band samples, sorted and disjoint.
pub fn detect_gaps(fhr: &[f64], band: Band) -> Result<Vec<GapSpan>> {
    band.validate()?;
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &x) in fhr.iter().enumerate() {
        match (band.is_valid(x), open) {
            (false, None) => open = Some(i),
            (true, Some(start)) => {
                spans.push(GapSpan { start, end: i });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        spans.push(GapSpan {
            start,
            end: fhr.len(),
        });
    }
    Ok(spans)
}

/// Fritsch–Carlson tangents for knots `(xs, ys)` with strictly increasing
/// `xs`. Secants of opposite sign (or a zero secant) force a flat tangent and
/// tangent pairs are rescaled onto the circle of radius 3 so every interval
/// stays monotone.
pub fn fritsch_carlson_tangents(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    debug_assert_eq!(n, ys.len());
    if n < 2 {
        return vec![0.0; n];
    }
    let secants: Vec<f64> = (0..n - 1)
        .map(|k| (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k]))
        .collect();

    let mut m = vec![0.0; n];
    m[0] = secants[0];
    m[n - 1] = secants[n - 2];
    for k in 1..n - 1 {
        let (a, b) = (secants[k - 1], secants[k]);
        m[k] = if a * b <= 0.0 { 0.0 } else { 0.5 * (a + b) };
    }

    for k in 0..n - 1 {
        let d = secants[k];
        if d == 0.0 {
            m[k] = 0.0;
            m[k + 1] = 0.0;
            continue;
        }
        let alpha = m[k] / d;
        let beta = m[k + 1] / d;
        let r2 = alpha * alpha + beta * beta;
        if r2 > 9.0 {
            let tau = 3.0 / r2.sqrt();
            m[k] = tau * alpha * d;
            m[k + 1] = tau * beta * d;
        }
    }
    m
}

/// Cubic Hermite value on `[x0, x1]` with end values `y0, y1` and tangents
/// `m0, m1`.
pub fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, m0: f64, m1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1
}

/// Replace every gap sample with the monotone cubic Hermite interpolant
/// through the surrounding valid samples. Leading and trailing gaps take the
/// nearest valid value. Valid samples are copied unchanged.
pub fn interpolate_gaps(fhr: &[f64], gaps: &[GapSpan]) -> Result<CleanSignal> {
    let mut invalid = vec![false; fhr.len()];
    for g in gaps {
        if g.start >= g.end || g.end > fhr.len() {
            return Err(Error::Parameter(format!(
                "gap [{}, {}) out of range for length {}",
                g.start,
                g.end,
                fhr.len()
            )));
        }
        invalid[g.start..g.end].iter_mut().for_each(|f| *f = true);
    }

    let knots: Vec<usize> = (0..fhr.len()).filter(|&i| !invalid[i]).collect();
    if knots.len() < 2 {
        return Err(Error::Unrecoverable(format!(
            "{} valid sample(s), need at least 2",
            knots.len()
        )));
    }
    let xs: Vec<f64> = knots.iter().map(|&i| i as f64).collect();
    let ys: Vec<f64> = knots.iter().map(|&i| fhr[i]).collect();
    let tangents = fritsch_carlson_tangents(&xs, &ys);

    let mut samples = fhr.to_vec();
    let first = knots[0];
    let last = *knots.last().unwrap();
    samples[..first].iter_mut().for_each(|s| *s = fhr[first]);
    samples[last + 1..].iter_mut().for_each(|s| *s = fhr[last]);
    for (k, pair) in knots.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        for (i, sample) in samples.iter_mut().enumerate().take(b).skip(a + 1) {
            *sample = hermite(
                xs[k],
                xs[k + 1],
                ys[k],
                ys[k + 1],
                tangents[k],
                tangents[k + 1],
                i as f64,
            );
        }
    }

    let mut repaired_spans = gaps.to_vec();
    repaired_spans.sort_by_key(|g| g.start);
    Ok(CleanSignal {
        samples,
        repaired_spans,
        quality: knots.len() as f64 / fhr.len() as f64,
    })
}

/// Per-block fraction of valid samples. Blocks are `window_minutes` long at
/// 4 Hz; a final partial block uses its own length as denominator.
pub fn quality_fraction(fhr: &[f64], window_minutes: f64, band: Band) -> Result<Vec<f64>> {
    band.validate()?;
    if window_minutes.is_nan() || window_minutes <= 0.0 {
        return Err(Error::Parameter("window_minutes must be positive".into()));
    }
    let block = ((window_minutes * 60.0 * SAMPLE_RATE_HZ).round() as usize).max(1);
    Ok(fhr
        .chunks(block)
        .map(|chunk| {
            chunk.iter().filter(|&&x| band.is_valid(x)).count() as f64 / chunk.len() as f64
        })
        .collect())
}

/// Outcome of repairing one record, with quality flags for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub id: String,
    pub signal: CleanSignal,
    pub block_quality: Vec<f64>,
    /// Gaps longer than the configured limit (60 s by default).
    pub long_gaps: Vec<GapSpan>,
    /// Any 30-minute block at or below 50% valid samples.
    pub low_quality: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairConfig {
    pub band: Band,
    pub quality_window_minutes: f64,
    pub min_block_quality: f64,
    pub long_gap_secs: f64,
}

impl Default for RepairConfig {
    fn default() -> Self {
        RepairConfig {
            band: Band::default(),
            quality_window_minutes: 30.0,
            min_block_quality: 0.5,
            long_gap_secs: 60.0,
        }
    }
}

/// Detect, repair and grade one signal. Low quality is flagged, never
/// dropped.
pub fn repair(id: &str, fhr: &[f64], config: &RepairConfig) -> Result<RepairReport> {
    let gaps = detect_gaps(fhr, config.band)?;
    let signal = interpolate_gaps(fhr, &gaps).map_err(|e| Error::in_record(id, e))?;
    let block_quality = quality_fraction(fhr, config.quality_window_minutes, config.band)?;
    let low_quality = block_quality.iter().any(|&q| q <= config.min_block_quality);
    let long_gaps = gaps
        .iter()
        .copied()
        .filter(|g| g.duration_secs() > config.long_gap_secs)
        .collect();
    Ok(RepairReport {
        id: id.to_string(),
        signal,
        block_quality,
        long_gaps,
        low_quality,
    })
}
