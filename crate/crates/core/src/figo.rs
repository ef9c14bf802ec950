//! Baseline and acceleration/deceleration descriptors of an FHR trace.
//! Diagnostic only; the classifiers never see these.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FigoParams {
    /// Minimum deviation from the baseline, inclusive.
    pub deviation_bpm: f64,
    /// Minimum event length in samples (10 s at 4 Hz).
    pub min_samples: usize,
}

impl Default for FigoParams {
    fn default() -> Self {
        FigoParams {
            deviation_bpm: 10.0,
            min_samples: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Acceleration,
    Deceleration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FigoEvent {
    pub kind: EventKind,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    /// Signed deviation of the most extreme sample.
    pub peak_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigoSummary {
    pub vbl: f64,
    pub rbl: f64,
    /// True when no sample fell within the band around the VBL.
    pub rbl_fallback: bool,
    pub accelerations: usize,
    pub decelerations: usize,
    pub events: Vec<FigoEvent>,
}

/// Mean of the whole signal.
pub fn virtual_baseline(fhr: &[f64]) -> Result<f64> {
    if fhr.is_empty() {
        return Err(Error::Validation("baseline of an empty signal".into()));
    }
    Ok(fhr.iter().sum::<f64>() / fhr.len() as f64)
}

/// Mean of the samples within `deviation_bpm` of the virtual baseline.
/// Returns the VBL and `true` if that band is empty.
pub fn real_baseline(fhr: &[f64], params: &FigoParams) -> Result<(f64, bool)> {
    let vbl = virtual_baseline(fhr)?;
    let (sum, n) = fhr
        .iter()
        .filter(|&&x| (x - vbl).abs() <= params.deviation_bpm)
        .fold((0.0, 0usize), |(s, n), &x| (s + x, n + 1));
    if n == 0 {
        log::warn!("no samples within ±{} bpm of VBL {vbl}; using VBL", params.deviation_bpm);
        return Ok((vbl, true));
    }
    Ok((sum / n as f64, false))
}

/// Maximal runs at least `deviation_bpm` above (acceleration) or below
/// (deceleration) `rbl` lasting at least `min_samples`.
pub fn count_events(fhr: &[f64], rbl: f64, params: &FigoParams) -> Vec<FigoEvent> {
    let kind_of = |x: f64| {
        let d = x - rbl;
        if d >= params.deviation_bpm {
            Some(EventKind::Acceleration)
        } else if d <= -params.deviation_bpm {
            Some(EventKind::Deceleration)
        } else {
            None
        }
    };
    let mut events = Vec::new();
    let mut i = 0;
    while i < fhr.len() {
        let Some(kind) = kind_of(fhr[i]) else {
            i += 1;
            continue;
        };
        let start = i;
        let mut peak = fhr[i] - rbl;
        while i < fhr.len() && kind_of(fhr[i]) == Some(kind) {
            let d = fhr[i] - rbl;
            if d.abs() > peak.abs() {
                peak = d;
            }
            i += 1;
        }
        if i - start >= params.min_samples {
            events.push(FigoEvent {
                kind,
                start,
                end: i,
                peak_deviation: peak,
            });
        }
    }
    events
}

pub fn summarize(fhr: &[f64], params: &FigoParams) -> Result<FigoSummary> {
    let vbl = virtual_baseline(fhr)?;
    let (rbl, rbl_fallback) = real_baseline(fhr, params)?;
    let events = count_events(fhr, rbl, params);
    let accelerations = events
        .iter()
        .filter(|e| e.kind == EventKind::Acceleration)
        .count();
    Ok(FigoSummary {
        vbl,
        rbl,
        rbl_fallback,
        accelerations,
        decelerations: events.len() - accelerations,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn p() -> FigoParams {
        FigoParams::default()
    }

    #[test]
    fn baselines() {
        assert_eq!(virtual_baseline(&[140.0; 10]).unwrap(), 140.0);
        assert_eq!(virtual_baseline(&[130.0, 150.0]).unwrap(), 140.0);
        assert!(virtual_baseline(&[]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let normal = Normal::new(140.0, 5.0).unwrap();
        let noisy: Vec<f64> = (0..1000).map(|_| normal.sample(&mut rng)).collect();
        assert!((virtual_baseline(&noisy).unwrap() - 140.0).abs() < 1.0);

        assert_eq!(real_baseline(&[140.0; 10], &p()).unwrap(), (140.0, false));
        let mut fhr = vec![140.0; 900];
        fhr.extend([180.0; 100]);
        assert_eq!(virtual_baseline(&fhr).unwrap(), 144.0);
        assert_eq!(real_baseline(&fhr, &p()).unwrap(), (140.0, false));

        let mut sym = vec![140.0; 200];
        sym.extend([155.0; 20]);
        sym.extend([125.0; 20]);
        assert_eq!(real_baseline(&sym, &p()).unwrap().0, 140.0);

        let (rbl, fallback) = real_baseline(&[100.0, 200.0], &p()).unwrap();
        assert!(fallback);
        assert_eq!(rbl, 150.0);
    }

    #[test]
    fn events() {
        assert!(count_events(&[140.0; 500], 140.0, &p()).is_empty());

        let mut fhr = vec![140.0; 400];
        fhr[100..340].iter_mut().for_each(|v| *v = 160.0); // 60 s
        let ev = count_events(&fhr, 140.0, &p());
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, EventKind::Acceleration);
        assert_eq!((ev[0].start, ev[0].end), (100, 340));
        assert_eq!(ev[0].peak_deviation, 20.0);

        let mut spike = vec![140.0; 400];
        spike[100..120].iter_mut().for_each(|v| *v = 160.0); // 5 s
        assert!(count_events(&spike, 140.0, &p()).is_empty());

        let mut dip = vec![140.0; 400];
        dip[10..50].iter_mut().for_each(|v| *v = 120.0);
        let s = summarize(&dip, &p()).unwrap();
        assert_eq!((s.accelerations, s.decelerations), (0, 1));
    }

    proptest! {
        #[test]
        fn shift_equivariance(
            fhr in prop::collection::vec(100.0f64..180.0, 1..400),
            c in -30.0f64..30.0,
        ) {
            // a dyadic shift keeps the arithmetic exact enough for counts
            let c = (c * 4.0).round() / 4.0;
            let shifted: Vec<f64> = fhr.iter().map(|x| x + c).collect();
            let a = summarize(&fhr, &p()).unwrap();
            let b = summarize(&shifted, &p()).unwrap();
            prop_assert!((b.vbl - a.vbl - c).abs() < 1e-9);
            prop_assert!((b.rbl - a.rbl - c).abs() < 1e-9);
            prop_assert_eq!(a.accelerations, b.accelerations);
            prop_assert_eq!(a.decelerations, b.decelerations);
        }

        #[test]
        fn events_are_disjoint_and_deviate(
            fhr in prop::collection::vec(prop_oneof![Just(140.0), Just(165.0), Just(115.0), 100.0f64..180.0], 0..600),
        ) {
            let events = count_events(&fhr, 140.0, &p());
            for pair in events.windows(2) {
                prop_assert!(pair[0].end <= pair[1].start);
            }
            for e in &events {
                prop_assert!(e.end - e.start >= 40);
                for &x in &fhr[e.start..e.end] {
                    match e.kind {
                        EventKind::Acceleration => prop_assert!(x - 140.0 >= 10.0),
                        EventKind::Deceleration => prop_assert!(x - 140.0 <= -10.0),
                    }
                }
            }
        }
    }
}
