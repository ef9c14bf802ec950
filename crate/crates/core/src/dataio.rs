//! Record and manifest ingestion.
//!
//! A record file is UTF-8 CSV with header `fhr` or `fhr,uc` and one sample
//! per row. Signal loss is encoded as `0`; empty and `nan`/`NA` cells are
//! read as that same missing marker. A manifest lists one record per row
//! under the header `id,path,delivery,ph`, with paths relative to the
//! manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling rate of every FHR and UC series.
pub const SAMPLE_RATE_HZ: f64 = 4.0;

/// Value stored for a lost or unreadable sample.
pub const MISSING: f64 = 0.0;

/// Plausible umbilical arterial pH, open interval.
pub const PH_BAND: (f64, f64) = (6.5, 7.8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delivery {
    Vaginal,
    Caesarean,
}

impl FromStr for Delivery {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vaginal" => Ok(Delivery::Vaginal),
            "caesarean" => Ok(Delivery::Caesarean),
            other => Err(Error::Validation(format!(
                "unknown delivery '{other}' (expected vaginal or caesarean)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annotation {
    Acidosis,
    Deterioration,
    NoPathologyEvidence,
    Normal,
}

/// Outcome class of a record. Cases are caesarean deliveries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Case,
    Control,
}

impl Label {
    /// Binary training target, 1 for case.
    pub fn target(self) -> f64 {
        match self {
            Label::Case => 1.0,
            Label::Control => 0.0,
        }
    }

    pub fn is_case(self) -> bool {
        self == Label::Case
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Case => Label::Control,
            Label::Control => Label::Case,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Case => "case",
            Label::Control => "control",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "case" | "1" => Ok(Label::Case),
            "control" | "0" => Ok(Label::Control),
            other => Err(Error::Validation(format!("unknown label '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub ph: f64,
    pub delivery: Delivery,
    pub annotation: Annotation,
}

impl RecordMeta {
    pub fn new(delivery: Delivery, ph: f64) -> Result<Self> {
        let (_, annotation) = label_record(delivery, ph)?;
        Ok(RecordMeta {
            ph,
            delivery,
            annotation,
        })
    }

    pub fn label(&self) -> Label {
        match self.delivery {
            Delivery::Caesarean => Label::Case,
            Delivery::Vaginal => Label::Control,
        }
    }
}

/// Assign the case/control label and the pathology annotation.
///
/// Every caesarean delivery is a case, including those with no recorded
/// pathology. The pH cut-offs are inclusive on the upper end:
/// `ph <= 7.20` is acidosis and `7.20 < ph <= 7.25` is deterioration.
pub fn label_record(delivery: Delivery, ph: f64) -> Result<(Label, Annotation)> {
    if !(ph > PH_BAND.0 && ph < PH_BAND.1) {
        return Err(Error::Validation(format!(
            "pH {ph} outside plausible band ({}, {})",
            PH_BAND.0, PH_BAND.1
        )));
    }
    Ok(match delivery {
        Delivery::Vaginal => (Label::Control, Annotation::Normal),
        Delivery::Caesarean if ph <= 7.20 => (Label::Case, Annotation::Acidosis),
        Delivery::Caesarean if ph <= 7.25 => (Label::Case, Annotation::Deterioration),
        Delivery::Caesarean => (Label::Case, Annotation::NoPathologyEvidence),
    })
}

/// One recording: the FHR series plus an optional UC channel that is kept
/// for provenance only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub fhr: Vec<f64>,
    pub uc: Option<Vec<f64>>,
    pub meta: Option<RecordMeta>,
}

impl Record {
    pub fn new(id: impl Into<String>, fhr: Vec<f64>) -> Self {
        Record {
            id: id.into(),
            fhr,
            uc: None,
            meta: None,
        }
    }

    pub fn with_meta(mut self, meta: RecordMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn len(&self) -> usize {
        self.fhr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fhr.is_empty()
    }

    pub fn label(&self) -> Option<Label> {
        self.meta.map(|m| m.label())
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / SAMPLE_RATE_HZ
    }
}

fn parse_cell(cell: &str) -> Option<f64> {
    let cell = cell.trim();
    match cell {
        "" | "nan" | "NaN" | "NA" | "na" => Some(MISSING),
        _ => cell
            .parse::<f64>()
            .ok()
            .map(|v| if v.is_finite() { v } else { MISSING }),
    }
}

/// Parse a record CSV. Rows are numbered from 1 after the header.
pub fn parse_record(text: &str, id: &str) -> Result<Record> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format {
        line: 1,
        message: "missing header".into(),
    })?;
    let has_uc = match header.trim().to_ascii_lowercase().as_str() {
        "fhr" => false,
        "fhr,uc" => true,
        other => {
            return Err(Error::Format {
                line: 1,
                message: format!("expected header 'fhr' or 'fhr,uc', found '{other}'"),
            })
        }
    };
    let columns = if has_uc { 2 } else { 1 };

    let mut fhr = Vec::new();
    let mut uc = Vec::new();
    let rows: Vec<&str> = lines.collect();
    // a single trailing blank line is a terminator, not a row
    let n_rows = match rows.last() {
        Some(last) if last.trim().is_empty() => rows.len() - 1,
        _ => rows.len(),
    };
    for (i, line) in rows[..n_rows].iter().enumerate() {
        let row = i + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns {
            return Err(Error::Row {
                row,
                message: format!("expected {columns} column(s), found {}", cells.len()),
            });
        }
        let value = |cell: &str| {
            parse_cell(cell).ok_or_else(|| Error::Row {
                row,
                message: format!("non-numeric value '{}'", cell.trim()),
            })
        };
        fhr.push(value(cells[0])?);
        if has_uc {
            uc.push(value(cells[1])?);
        }
    }

    Ok(Record {
        id: id.to_string(),
        fhr,
        uc: has_uc.then_some(uc),
        meta: None,
    })
}

/// Serialize a record's signals in the same CSV layout `parse_record` reads.
pub fn write_record(record: &Record) -> String {
    let mut out = String::with_capacity(record.len() * 8);
    match &record.uc {
        Some(uc) => {
            out.push_str("fhr,uc\n");
            for (f, u) in record.fhr.iter().zip(uc) {
                out.push_str(&format!("{f},{u}\n"));
            }
        }
        None => {
            out.push_str("fhr\n");
            for f in &record.fhr {
                out.push_str(&format!("{f}\n"));
            }
        }
    }
    out
}

pub fn read_record(path: &Path, id: &str) -> Result<Record> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_record(&text, id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub delivery: Delivery,
    pub ph: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Parse manifest CSV text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        let expected = ["id", "path", "delivery", "ph"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Format {
                line: 1,
                message: format!("expected header 'id,path,delivery,ph', found '{}'", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut entries = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row_no = i + 1;
            let row = row.map_err(|e| Error::Row {
                row: row_no,
                message: e.to_string(),
            })?;
            let delivery: Delivery = row[2].parse().map_err(|e: Error| Error::Row {
                row: row_no,
                message: e.to_string(),
            })?;
            let ph: f64 = row[3].parse().map_err(|_| Error::Row {
                row: row_no,
                message: format!("non-numeric pH '{}'", &row[3]),
            })?;
            let path = PathBuf::from(&row[1]);
            entries.push(ManifestEntry {
                id: row[0].to_string(),
                path: if path.is_absolute() { path } else { base.join(path) },
                delivery,
                ph,
            });
        }
        let manifest = DatasetManifest { entries };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for entry in &self.entries {
            if !seen.insert(entry.id.as_str()) {
                return Err(Error::Validation(format!("duplicate record id '{}'", entry.id)));
            }
        }
        Ok(())
    }

    /// Serialize as manifest CSV. Paths are written as stored.
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["id", "path", "delivery", "ph"])?;
        for e in &self.entries {
            let delivery = match e.delivery {
                Delivery::Vaginal => "vaginal",
                Delivery::Caesarean => "caesarean",
            };
            writer.write_record([
                e.id.as_str(),
                &e.path.to_string_lossy(),
                delivery,
                &e.ph.to_string(),
            ])?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub total: usize,
    pub cases: usize,
    pub controls: usize,
}

impl DatasetSummary {
    pub fn of(records: &[Record]) -> Self {
        let cases = records
            .iter()
            .filter(|r| r.label() == Some(Label::Case))
            .count();
        let controls = records
            .iter()
            .filter(|r| r.label() == Some(Label::Control))
            .count();
        DatasetSummary {
            total: records.len(),
            cases,
            controls,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub summary: DatasetSummary,
}

/// Read and label every record in the manifest. Files are parsed in
/// parallel; the result keeps manifest order.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Dataset> {
    manifest.validate()?;
    let records = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let meta = RecordMeta::new(entry.delivery, entry.ph)
                .map_err(|e| Error::in_record(&entry.id, e))?;
            let record =
                read_record(&entry.path, &entry.id).map_err(|e| Error::in_record(&entry.id, e))?;
            Ok(record.with_meta(meta))
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = DatasetSummary::of(&records);
    Ok(Dataset { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_single_column() {
        let r = parse_record("fhr\n140\n141\n0\n139", "r1").unwrap();
        assert_eq!(r.fhr, vec![140.0, 141.0, 0.0, 139.0]);
        assert_eq!(r.len(), 4);
        assert!(r.uc.is_none());
    }

    #[test]
    fn parses_two_columns() {
        let r = parse_record("fhr,uc\n120,10\n121,12\n", "r2").unwrap();
        assert_eq!(r.fhr, vec![120.0, 121.0]);
        assert_eq!(r.uc, Some(vec![10.0, 12.0]));
    }

    #[test]
    fn garbage_cell_is_a_row_error() {
        match parse_record("fhr\n140\nabc", "r") {
            Err(Error::Row { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn empty_and_nan_cells_are_missing() {
        let r = parse_record("fhr,uc\n,5\nnan,\n150,NA\n", "r").unwrap();
        assert_eq!(r.fhr, vec![0.0, 0.0, 150.0]);
        assert_eq!(r.uc, Some(vec![5.0, 0.0, 0.0]));
    }

    #[test]
    fn bad_header_and_column_count() {
        assert!(matches!(
            parse_record("bpm\n140", "r"),
            Err(Error::Format { line: 1, .. })
        ));
        assert!(matches!(
            parse_record("fhr\n140\n141,3", "r"),
            Err(Error::Row { row: 2, .. })
        ));
        assert!(matches!(parse_record("", "r"), Err(Error::Format { .. })));
    }

    #[test]
    fn labeling_rules() {
        use Annotation::*;
        assert_eq!(
            label_record(Delivery::Caesarean, 7.10).unwrap(),
            (Label::Case, Acidosis)
        );
        assert_eq!(
            label_record(Delivery::Caesarean, 7.20).unwrap(),
            (Label::Case, Acidosis)
        );
        assert_eq!(
            label_record(Delivery::Caesarean, 7.22).unwrap(),
            (Label::Case, Deterioration)
        );
        assert_eq!(
            label_record(Delivery::Caesarean, 7.30).unwrap(),
            (Label::Case, NoPathologyEvidence)
        );
        assert_eq!(
            label_record(Delivery::Vaginal, 7.30).unwrap(),
            (Label::Control, Normal)
        );
        assert_eq!(
            label_record(Delivery::Vaginal, 7.05).unwrap(),
            (Label::Control, Normal)
        );
        assert!(label_record(Delivery::Vaginal, 8.1).is_err());
        assert!(label_record(Delivery::Caesarean, 6.5).is_err());
        assert!(label_record(Delivery::Caesarean, f64::NAN).is_err());
    }

    #[test]
    fn manifest_rejects_duplicates() {
        let text = "id,path,delivery,ph\na,a.csv,vaginal,7.3\na,b.csv,caesarean,7.1\n";
        assert!(matches!(
            DatasetManifest::parse(text, Path::new(".")),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn manifest_rejects_bad_header() {
        let text = "id,file,delivery,ph\na,a.csv,vaginal,7.3\n";
        assert!(DatasetManifest::parse(text, Path::new(".")).is_err());
    }

    #[test]
    fn empty_manifest_loads_nothing() {
        let manifest = DatasetManifest::parse("id,path,delivery,ph\n", Path::new(".")).unwrap();
        let data = load_dataset(&manifest).unwrap();
        assert!(data.records.is_empty());
        assert_eq!(data.summary, DatasetSummary::default());
    }

    #[test]
    fn missing_file_names_record() {
        let text = "id,path,delivery,ph\nghost,does/not/exist.csv,vaginal,7.3\n";
        let manifest = DatasetManifest::parse(text, Path::new("/nonexistent")).unwrap();
        let err = load_dataset(&manifest).unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    fn sample() -> impl Strategy<Value = f64> {
        prop_oneof![
            Just(0.0),
            (50.0f64..210.0),
            (-1e6f64..1e6),
        ]
    }

    proptest! {
        #[test]
        fn csv_round_trip(
            fhr in prop::collection::vec(sample(), 0..60),
            with_uc in any::<bool>(),
        ) {
            let uc = with_uc.then(|| fhr.iter().map(|v| v / 3.0).collect::<Vec<_>>());
            let record = Record { id: "rt".into(), fhr, uc, meta: None };
            let back = parse_record(&write_record(&record), "rt").unwrap();
            prop_assert_eq!(back, record);
        }

        #[test]
        fn labels_partition(ph in 6.51f64..7.79, caesarean in any::<bool>()) {
            let delivery = if caesarean { Delivery::Caesarean } else { Delivery::Vaginal };
            let (label, annotation) = label_record(delivery, ph).unwrap();
            prop_assert_eq!(label.is_case(), caesarean);
            prop_assert_eq!(annotation == Annotation::Normal, !caesarean);
            prop_assert_eq!(label_record(delivery, ph).unwrap(), (label, annotation));
        }
    }
}
