//! Seeded synthetic FHR data for tests, demos and smoke runs.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::{write_record, DatasetManifest, Delivery, Label, ManifestEntry, Record};
use crate::error::{Error, Result};
use crate::seed;

/// Cases are `150 + 8 sin(2πt/40 + φ)` plus noise, controls are `140` plus
/// noise (σ = 2 bpm). Returned as `n_per_class` cases followed by as many
/// controls.
pub fn separable_windows(n_per_class: usize, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Label>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 2.0).expect("valid sigma");
    let mut xs = Vec::with_capacity(2 * n_per_class);
    let mut ys = Vec::with_capacity(2 * n_per_class);
    for class in [Label::Case, Label::Control] {
        for _ in 0..n_per_class {
            let phase = rng.random::<f64>() * 2.0 * PI;
            let x = (0..n)
                .map(|t| {
                    let base = match class {
                        Label::Case => 150.0 + 8.0 * (2.0 * PI * t as f64 / 40.0 + phase).sin(),
                        Label::Control => 140.0,
                    };
                    base + noise.sample(&mut rng)
                })
                .collect();
            xs.push(x);
            ys.push(class);
        }
    }
    (xs, ys)
}

/// One synthetic FHR trace. Cases carry periodic decelerations, controls
/// periodic accelerations; both have baseline wander, noise and a few
/// dropouts coded as 0.
pub fn synthetic_trace(label: Label, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, 3.0).expect("valid sigma");
    let baseline = 130.0 + 20.0 * rng.random::<f64>();
    let period = 600.0 + 400.0 * rng.random::<f64>();
    let depth = match label {
        Label::Case => -(15.0 + 15.0 * rng.random::<f64>()),
        Label::Control => 10.0 + 10.0 * rng.random::<f64>(),
    };
    let mut fhr: Vec<f64> = (0..len)
        .map(|t| {
            let phase = (t as f64 % period) / period;
            let event = if phase < 0.15 { (phase / 0.15 * PI).sin() } else { 0.0 };
            baseline + depth * event + 3.0 * (2.0 * PI * t as f64 / 2400.0).sin() + noise.sample(rng)
        })
        .collect();
    for _ in 0..len / 2000 {
        let start = rng.random_range(1..len.saturating_sub(20).max(2));
        let end = (start + rng.random_range(1..20)).min(len - 1);
        fhr[start..end].iter_mut().for_each(|v| *v = 0.0);
    }
    fhr
}

/// Write a corpus of `cases + controls` record CSVs plus `manifest.csv`
/// into `dir`. Case pH values fall in the acidosis range.
pub fn write_corpus(dir: &Path, cases: usize, controls: usize, len: usize, seed: u64) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for i in 0..cases + controls {
        let label = if i < cases { Label::Case } else { Label::Control };
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[i as u64]));
        let id = format!("r{:04}", i + 1);
        let record = Record::new(&id, synthetic_trace(label, len, &mut rng));
        let path = dir.join(format!("{id}.csv"));
        fs::write(&path, write_record(&record)).map_err(|e| Error::io(&path, e))?;
        let (delivery, ph) = match label {
            Label::Case => (Delivery::Caesarean, 7.05 + 0.1 * rng.random::<f64>()),
            Label::Control => (Delivery::Vaginal, 7.25 + 0.1 * rng.random::<f64>()),
        };
        entries.push(ManifestEntry {
            path: format!("{id}.csv").into(),
            id,
            delivery,
            ph: (ph * 100.0).round() / 100.0,
        });
    }
    let manifest = DatasetManifest { entries };
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest.to_csv()?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
