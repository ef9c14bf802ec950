use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctgwin::dataio::{load_dataset, read_record, write_record, Annotation, DatasetManifest, ManifestEntry};
use ctgwin::experiment::{cell_data, compare_report, prepare_records, run_experiment, write_comparison, ExperimentConfig};
use ctgwin::figo::{summarize, FigoParams};
use ctgwin::metrics::{evaluate, roc_curve, EvalOptions, EvalReport, PositiveClass, ScoredSet};
use ctgwin::models::{fit, preset, Family, FitOptions, Normalization, TrainedModel};
use ctgwin::preprocess::{repair, Band, RepairConfig};
use ctgwin::segmentation::{read_windows_csv, split_records, write_windows_csv, Window};
use ctgwin::synthetic::write_corpus;
use ctgwin::{Error, Result};

#[derive(Parser)]
#[command(name = "ctgwin", version, about = "Windowed fetal heart-rate classification")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct SeedArgs {
    #[arg(long)]
    seed_split: Option<u64>,
    #[arg(long)]
    seed_balance: Option<u64>,
    #[arg(long)]
    seed_init: Option<u64>,
    #[arg(long)]
    seed_train: Option<u64>,
}

impl SeedArgs {
    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(s) = self.seed_split {
            config.seed_split = s;
        }
        if let Some(s) = self.seed_balance {
            config.seed_balance = s;
        }
        if let Some(s) = self.seed_init {
            config.seed_init = s;
        }
        if let Some(s) = self.seed_train {
            config.seed_train = s;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load and label every record in a manifest; write a per-record summary.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        /// Summary CSV (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repair signal gaps; write cleaned records, a repair report and a new manifest.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50.0)]
        band_low: f64,
        #[arg(long, default_value_t = 210.0)]
        band_high: f64,
    },
    /// Split records, window them and balance both sides as a run would.
    Segment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seeds: SeedArgs,
    },
    /// Fit one model preset to a windows CSV.
    Train {
        #[arg(long)]
        family: String,
        #[arg(long)]
        windows: PathBuf,
        /// Model JSON to write.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV log for network families.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value = "train_zscore")]
        normalization: String,
        #[arg(long, default_value_t = 0)]
        seed_init: u64,
        #[arg(long, default_value_t = 0)]
        seed_train: u64,
    },
    /// Score a windows CSV with a saved model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        windows: PathBuf,
        #[arg(long, default_value = "case")]
        positive_class: String,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Metrics CSV (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        positive_class: Option<String>,
        #[command(flatten)]
        seeds: SeedArgs,
    },
    /// Rank (family, window) cells across metrics files by AUC.
    Compare {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Baseline, acceleration and deceleration descriptors of records.
    Figo {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a seeded synthetic corpus with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        cases: usize,
        #[arg(long, default_value_t = 30)]
        controls: usize,
        /// Samples per record (4 Hz).
        #[arg(long, default_value_t = 14_400)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn annotation_name(a: Annotation) -> &'static str {
    match a {
        Annotation::Acidosis => "acidosis",
        Annotation::Deterioration => "deterioration",
        Annotation::NoPathologyEvidence => "no_pathology_evidence",
        Annotation::Normal => "normal",
    }
}

fn csv_writer(out: Option<&Path>) -> Result<csv::Writer<Box<dyn std::io::Write>>> {
    let sink: Box<dyn std::io::Write> = match out {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn flush<W: std::io::Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::Serde(e.to_string()))
}

fn ingest(manifest: &Path, out: Option<&Path>) -> Result<()> {
    let data = load_dataset(&DatasetManifest::load(manifest)?)?;
    let mut w = csv_writer(out)?;
    w.write_record(["id", "samples", "duration_secs", "ph", "label", "annotation"])?;
    for r in &data.records {
        let meta = r.meta.as_ref().expect("manifest records are labelled");
        w.write_record([
            r.id.clone(),
            r.len().to_string(),
            r.duration_secs().to_string(),
            meta.ph.to_string(),
            meta.label().to_string(),
            annotation_name(meta.annotation).to_string(),
        ])?;
    }
    flush(w)?;
    let s = data.summary;
    eprintln!("{} records: {} case, {} control", s.total, s.cases, s.controls);
    Ok(())
}

fn preprocess(manifest_path: &Path, out: &Path, band: Band) -> Result<()> {
    band.validate()?;
    let manifest = DatasetManifest::load(manifest_path)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config = RepairConfig {
        band,
        ..RepairConfig::default()
    };
    let mut report = csv::Writer::from_path(out.join("repair_report.csv"))?;
    report.write_record(["id", "gaps", "repaired_samples", "long_gaps", "min_block_quality", "low_quality"])?;
    let mut entries = Vec::new();
    for entry in &manifest.entries {
        let mut record = read_record(&entry.path, &entry.id)?;
        let rep = repair(&entry.id, &record.fhr, &config)?;
        let repaired: usize = rep.signal.repaired_spans.iter().map(|g| g.len()).sum();
        report.write_record([
            entry.id.clone(),
            rep.signal.repaired_spans.len().to_string(),
            repaired.to_string(),
            rep.long_gaps.len().to_string(),
            rep.block_quality.iter().copied().fold(1.0f64, f64::min).to_string(),
            rep.low_quality.to_string(),
        ])?;
        record.fhr = rep.signal.samples;
        let file = format!("{}.csv", entry.id);
        let path = out.join(&file);
        fs::write(&path, write_record(&record)).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            id: entry.id.clone(),
            path: file.into(),
            delivery: entry.delivery,
            ph: entry.ph,
        });
    }
    flush(report)?;
    let path = out.join("manifest.csv");
    fs::write(&path, DatasetManifest { entries }.to_csv()?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn write_windows(path: &Path, windows: &[Window]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_windows_csv(windows, file)
}

fn read_windows(path: &Path) -> Result<Vec<Window>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_windows_csv(file)
}

fn segment_cmd(config_path: &Path, window: usize, out: &Path, seeds: &SeedArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(config_path)?;
    seeds.apply(&mut config);
    let prepared = prepare_records(&config)?;
    let plan = split_records(&prepared.records, config.split_target(), config.seed_split)?;
    let data = cell_data(&prepared.records, &plan, window, &config).map_err(|(_, e)| e)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_windows(&out.join(format!("train_W{window}.csv")), &data.train)?;
    write_windows(&out.join(format!("test_W{window}.csv")), &data.test)?;
    write_windows(&out.join(format!("test_all_W{window}.csv")), &data.test_all)?;
    eprintln!(
        "W={window}: {} train, {} balanced test, {} unbalanced test windows",
        data.train.len(),
        data.test.len(),
        data.test_all.len()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    family: &str,
    windows: &Path,
    out: &Path,
    log_path: Option<&Path>,
    epochs: Option<usize>,
    normalization: &str,
    seed_init: u64,
    seed_train: u64,
) -> Result<()> {
    let family: Family = family.parse()?;
    let normalization: Normalization = normalization.parse()?;
    let windows = read_windows(windows)?;
    let n = windows
        .first()
        .map(Window::len)
        .ok_or_else(|| Error::Validation("no windows to train on".into()))?;
    let mut spec = preset(family, n)?.with_seed(seed_init);
    if let (Some(p), Some(e)) = (spec.net_params_mut(), epochs) {
        p.epochs = e;
    }
    let (xs, ys): (Vec<Vec<f64>>, Vec<_>) = windows.into_iter().map(|w| (w.samples, w.label)).unzip();
    let options = FitOptions {
        normalization,
        train_seed: seed_train,
    };
    let (model, report) = fit(&spec, &xs, &ys, &options)?;
    model.save(out)?;
    if let (Some(path), Some(report)) = (log_path, report) {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        report.write_csv(file)?;
    }
    Ok(())
}

fn evaluate_cmd(
    model: &Path,
    windows: &Path,
    positive: &str,
    threshold: f64,
    out: Option<&Path>,
    roc: Option<&Path>,
) -> Result<()> {
    let positive: PositiveClass = positive.parse()?;
    let model = TrainedModel::load(model)?;
    let windows = read_windows(windows)?;
    let (xs, ys): (Vec<Vec<f64>>, Vec<_>) = windows.into_iter().map(|w| (w.samples, w.label)).unzip();
    let set = ScoredSet::new(model.predict_batch(&xs)?, ys)?;
    let options = EvalOptions {
        threshold,
        positive,
        ..EvalOptions::default()
    };
    let report = evaluate(&set, &options)?;
    let mut w = csv_writer(out)?;
    let mut header = vec!["family", "window"];
    header.extend(EvalReport::CSV_HEADER);
    w.write_record(&header)?;
    let mut row = vec![model.family().to_string(), model.spec.window_size.to_string()];
    row.extend(report.csv_fields());
    w.write_record(&row)?;
    flush(w)?;
    if let Some(path) = roc {
        let view = match positive {
            PositiveClass::Case => set,
            PositiveClass::Control => set.flipped(),
        };
        let curve = roc_curve(&view)?;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["fpr", "tpr", "threshold"])?;
        for p in &curve.points {
            w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
        }
        flush(w)?;
    }
    Ok(())
}

fn run_cmd(config_path: &Path, out: Option<PathBuf>, positive: Option<&str>, seeds: &SeedArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(config_path)?;
    seeds.apply(&mut config);
    if let Some(out) = out {
        config.output = out;
    }
    if let Some(p) = positive {
        config.positive_class = p.parse()?;
    }
    config.validate()?;
    let outcome = run_experiment(&config)?;
    for c in &outcome.cells {
        eprintln!("{:<14} {}", c.family, c.balanced.table_row(c.window));
    }
    if !outcome.failures.is_empty() {
        eprintln!("{} cell(s) failed; see failures.csv", outcome.failures.len());
    }
    Ok(())
}

fn figo_cmd(records: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut w = csv_writer(out)?;
    w.write_record(["record", "vbl", "rbl", "rbl_fallback", "accelerations", "decelerations"])?;
    for path in records {
        let id = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        let record = read_record(path, &id)?;
        let s = summarize(&record.fhr, &FigoParams::default()).map_err(|e| Error::in_record(&id, e))?;
        w.write_record([
            id,
            s.vbl.to_string(),
            s.rbl.to_string(),
            s.rbl_fallback.to_string(),
            s.accelerations.to_string(),
            s.decelerations.to_string(),
        ])?;
    }
    flush(w)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest { manifest, out } => ingest(&manifest, out.as_deref()),
        Command::Preprocess {
            manifest,
            out,
            band_low,
            band_high,
        } => preprocess(
            &manifest,
            &out,
            Band {
                low: band_low,
                high: band_high,
            },
        ),
        Command::Segment {
            config,
            window,
            out,
            seeds,
        } => segment_cmd(&config, window, &out, &seeds),
        Command::Train {
            family,
            windows,
            out,
            log,
            epochs,
            normalization,
            seed_init,
            seed_train,
        } => train_cmd(
            &family,
            &windows,
            &out,
            log.as_deref(),
            epochs,
            &normalization,
            seed_init,
            seed_train,
        ),
        Command::Evaluate {
            model,
            windows,
            positive_class,
            threshold,
            out,
            roc,
        } => evaluate_cmd(&model, &windows, &positive_class, threshold, out.as_deref(), roc.as_deref()),
        Command::Run {
            config,
            out,
            positive_class,
            seeds,
        } => run_cmd(&config, out, positive_class.as_deref(), &seeds),
        Command::Compare { metrics, out } => {
            let ranked = compare_report(&metrics)?;
            match out {
                Some(p) => write_comparison(&ranked, fs::File::create(&p).map_err(|e| Error::io(&p, e))?),
                None => write_comparison(&ranked, std::io::stdout()),
            }
        }
        Command::Figo { records, out } => figo_cmd(&records, out.as_deref()),
        Command::Synth {
            out,
            cases,
            controls,
            length,
            seed,
        } => write_corpus(&out, cases, controls, length, seed).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
