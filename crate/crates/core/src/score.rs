//! Labeled detector-score matrices.
//!
//! Every detector output, whether a continuous fake-likelihood or a hard
//! real/fake verdict, is stored as a value in `[0, 1]`. Hard verdicts are
//! mapped through [`unify_binary`] so both modalities compose under the same
//! ensemble operators.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};

pub const DEFAULT_TAG: &str = "default";

const CSV_FIXED_COLUMNS: [&str; 4] = ["sample_id", "benchmark", "subset", "label"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Parses `0`/`real` or `1`/`fake`, ignoring case.
    pub fn from_token(token: &str) -> Option<Label> {
        match token.trim().to_ascii_lowercase().as_str() {
            "0" | "real" => Some(Label::Real),
            "1" | "fake" => Some(Label::Fake),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }

    /// Decision obtained by thresholding a unit-interval score at 0.5.
    pub fn from_score(score: f64) -> Label {
        if score > 0.5 {
            Label::Fake
        } else {
            Label::Real
        }
    }

    /// Majority label of a count pair; a tie goes to fake.
    pub fn majority(n_real: usize, n_fake: usize) -> Label {
        if n_fake >= n_real {
            Label::Fake
        } else {
            Label::Real
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Maps a hard verdict onto the unit interval: real is 0.0, fake is 1.0.
pub fn unify_binary(raw: Label) -> f64 {
    match raw {
        Label::Real => 0.0,
        Label::Fake => 1.0,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    #[default]
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorMeta {
    pub name: String,
    pub kind: DetectorKind,
}

impl DetectorMeta {
    pub fn new(name: impl Into<String>, kind: DetectorKind) -> Self {
        DetectorMeta {
            name: name.into(),
            kind,
        }
    }

    pub fn continuous(name: impl Into<String>) -> Self {
        Self::new(name, DetectorKind::Continuous)
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Self::new(name, DetectorKind::Binary)
    }

    fn check_value(&self, value: f64) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&value) {
            return Err("score out of range".to_string());
        }
        if self.kind == DetectorKind::Binary && value != 0.0 && value != 1.0 {
            return Err(format!(
                "binary detector `{}` has non-binary value {value}",
                self.name
            ));
        }
        Ok(())
    }
}

/// Sidecar document declaring detector kinds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    pub detectors: Vec<DetectorMeta>,
}

impl Registry {
    pub fn load(path: &Path) -> Result<Registry> {
        let file = File::open(path).map_err(|e| FuseError::io(path, e))?;
        let registry: Registry = serde_json::from_reader(BufReader::new(file))?;
        let mut seen = HashSet::new();
        for det in &registry.detectors {
            if det.name.is_empty() || !seen.insert(det.name.as_str()) {
                return Err(FuseError::Schema(format!(
                    "registry names must be unique and non-empty, got `{}`",
                    det.name
                )));
            }
        }
        Ok(registry)
    }

    fn kind_of(&self, name: &str) -> Option<DetectorKind> {
        self.detectors
            .iter()
            .find(|d| d.name == name)
            .map(|d| d.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub label: Label,
    pub benchmark: String,
    pub subset: String,
    pub scores: Vec<f64>,
}

/// Immutable table of labeled samples, one score per registered detector.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    registry: Vec<DetectorMeta>,
    records: Vec<SampleRecord>,
}

impl ScoreMatrix {
    pub fn new(registry: Vec<DetectorMeta>, records: Vec<SampleRecord>) -> Result<Self> {
        check_registry(&registry)?;
        for (i, record) in records.iter().enumerate() {
            let row = i + 1;
            if record.scores.len() != registry.len() {
                return Err(FuseError::row(
                    row,
                    "scores",
                    format!(
                        "expected {} scores, found {}",
                        registry.len(),
                        record.scores.len()
                    ),
                ));
            }
            for (det, &value) in registry.iter().zip(&record.scores) {
                det.check_value(value)
                    .map_err(|msg| FuseError::row(row, det.name.clone(), msg))?;
            }
        }
        Ok(ScoreMatrix { registry, records })
    }

    pub fn registry(&self) -> &[DetectorMeta] {
        &self.registry
    }

    pub fn detector_names(&self) -> Vec<String> {
        self.registry.iter().map(|d| d.name.clone()).collect()
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn n_samples(&self) -> usize {
        self.records.len()
    }

    pub fn n_detectors(&self) -> usize {
        self.registry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn scores(&self, i: usize) -> &[f64] {
        &self.records[i].scores
    }

    pub fn label(&self, i: usize) -> Label {
        self.records[i].label
    }

    /// `(n_real, n_fake)` over the whole matrix.
    pub fn class_counts(&self) -> (usize, usize) {
        let fake = self
            .records
            .iter()
            .filter(|r| r.label == Label::Fake)
            .count();
        (self.records.len() - fake, fake)
    }

    /// Fails unless `other` has the same detectors in the same order.
    pub fn ensure_same_registry(&self, other: &[DetectorMeta]) -> Result<()> {
        let mine: Vec<&str> = self.registry.iter().map(|d| d.name.as_str()).collect();
        let theirs: Vec<&str> = other.iter().map(|d| d.name.as_str()).collect();
        if mine != theirs {
            return Err(FuseError::Registry(format!(
                "expected detectors {theirs:?}, found {mine:?}"
            )));
        }
        Ok(())
    }

    /// Returns a matrix with the selected records, in the given order.
    pub fn select(&self, indices: &[usize]) -> ScoreMatrix {
        ScoreMatrix {
            registry: self.registry.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Concatenates matrices sharing one registry.
    pub fn concat(parts: &[ScoreMatrix]) -> Result<ScoreMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| FuseError::Precondition("nothing to concatenate".into()))?;
        let mut records = Vec::new();
        for part in parts {
            part.ensure_same_registry(&first.registry)?;
            records.extend(part.records.iter().cloned());
        }
        Ok(ScoreMatrix {
            registry: first.registry.clone(),
            records,
        })
    }
}

fn check_registry(registry: &[DetectorMeta]) -> Result<()> {
    let mut seen = HashSet::new();
    for det in registry {
        if det.name.is_empty() {
            return Err(FuseError::Schema("empty detector name".into()));
        }
        if !seen.insert(det.name.as_str()) {
            return Err(FuseError::Schema(format!(
                "duplicate detector name `{}`",
                det.name
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreFormat {
    Csv,
    Jsonl,
}

impl ScoreFormat {
    /// Guesses the format from a file extension; anything but `.jsonl` is CSV.
    pub fn from_path(path: &Path) -> ScoreFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("jsonl") => ScoreFormat::Jsonl,
            _ => ScoreFormat::Csv,
        }
    }
}

impl FromStr for ScoreFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ScoreFormat::Csv),
            "jsonl" => Ok(ScoreFormat::Jsonl),
            other => Err(format!("unknown score format `{other}`")),
        }
    }
}

/// Loads a score file, taking detector kinds from `registry` when given and
/// treating every detector as continuous otherwise.
pub fn load_scores(
    path: &Path,
    format: ScoreFormat,
    registry: Option<&Registry>,
) -> Result<ScoreMatrix> {
    let file = File::open(path).map_err(|e| FuseError::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        ScoreFormat::Csv => read_csv(reader, registry),
        ScoreFormat::Jsonl => read_jsonl(reader, registry),
    }
}

fn resolve_registry(names: Vec<String>, sidecar: Option<&Registry>) -> Result<Vec<DetectorMeta>> {
    let registry = match sidecar {
        None => names.into_iter().map(DetectorMeta::continuous).collect(),
        Some(sidecar) => {
            let mut metas = Vec::with_capacity(names.len());
            for name in names {
                let kind = sidecar.kind_of(&name).ok_or_else(|| {
                    FuseError::Schema(format!("detector `{name}` missing from registry sidecar"))
                })?;
                metas.push(DetectorMeta::new(name, kind));
            }
            if metas.len() != sidecar.detectors.len() {
                return Err(FuseError::Schema(format!(
                    "registry sidecar declares {} detectors, score file has {}",
                    sidecar.detectors.len(),
                    metas.len()
                )));
            }
            metas
        }
    };
    check_registry(&registry)?;
    Ok(registry)
}

pub fn read_csv<R: Read>(reader: R, sidecar: Option<&Registry>) -> Result<ScoreMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let columns: Vec<&str> = header.iter().collect();
    if columns.len() < CSV_FIXED_COLUMNS.len() || columns[..4] != CSV_FIXED_COLUMNS {
        return Err(FuseError::Schema(format!(
            "CSV header must start with {}",
            CSV_FIXED_COLUMNS.join(",")
        )));
    }
    let names: Vec<String> = columns[4..].iter().map(|s| s.to_string()).collect();
    let registry = resolve_registry(names, sidecar)?;

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        if row.len() != header.len() {
            return Err(FuseError::row(
                row_no,
                "*",
                format!("expected {} fields, found {}", header.len(), row.len()),
            ));
        }
        let label = Label::from_token(&row[3]).ok_or_else(|| {
            FuseError::row(row_no, "label", format!("unknown label `{}`", &row[3]))
        })?;
        let mut scores = Vec::with_capacity(registry.len());
        for (det, raw) in registry.iter().zip(row.iter().skip(4)) {
            let value = parse_score(raw, row_no, &det.name)?;
            det.check_value(value)
                .map_err(|msg| FuseError::row(row_no, det.name.clone(), msg))?;
            scores.push(value);
        }
        records.push(SampleRecord {
            sample_id: row[0].to_string(),
            benchmark: row[1].to_string(),
            subset: row[2].to_string(),
            label,
            scores,
        });
    }
    ScoreMatrix::new(registry, records)
}

fn parse_score(raw: &str, row: usize, field: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| FuseError::row(row, field, format!("non-numeric score `{raw}`")))
}

#[derive(Deserialize)]
struct JsonlLine {
    sample_id: String,
    #[serde(default)]
    benchmark: Option<String>,
    #[serde(default)]
    subset: Option<String>,
    label: serde_json::Value,
    scores: serde_json::Map<String, serde_json::Value>,
}

pub fn read_jsonl<R: BufRead>(reader: R, sidecar: Option<&Registry>) -> Result<ScoreMatrix> {
    let mut registry: Option<Vec<DetectorMeta>> = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let row_no = i + 1;
        let line = line.map_err(|e| FuseError::row(row_no, "*", e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonlLine = serde_json::from_str(&line)
            .map_err(|e| FuseError::row(row_no, "*", format!("malformed JSON: {e}")))?;

        let registry = match &registry {
            Some(r) => r,
            None => {
                let names = parsed.scores.keys().cloned().collect();
                registry.insert(resolve_registry(names, sidecar)?)
            }
        };
        if parsed.scores.len() != registry.len() {
            return Err(FuseError::row(
                row_no,
                "scores",
                format!(
                    "expected {} scores, found {}",
                    registry.len(),
                    parsed.scores.len()
                ),
            ));
        }

        let label = match &parsed.label {
            serde_json::Value::String(s) => Label::from_token(s),
            serde_json::Value::Number(n) => Label::from_token(&n.to_string()),
            _ => None,
        }
        .ok_or_else(|| {
            FuseError::row(row_no, "label", format!("unknown label `{}`", parsed.label))
        })?;

        let mut scores = Vec::with_capacity(registry.len());
        for det in registry.iter() {
            let raw = parsed.scores.get(&det.name).ok_or_else(|| {
                FuseError::row(row_no, det.name.clone(), "missing detector score")
            })?;
            let value = raw.as_f64().ok_or_else(|| {
                FuseError::row(
                    row_no,
                    det.name.clone(),
                    format!("non-numeric score `{raw}`"),
                )
            })?;
            det.check_value(value)
                .map_err(|msg| FuseError::row(row_no, det.name.clone(), msg))?;
            scores.push(value);
        }
        records.push(SampleRecord {
            sample_id: parsed.sample_id,
            label,
            benchmark: parsed.benchmark.unwrap_or_else(|| DEFAULT_TAG.to_string()),
            subset: parsed.subset.unwrap_or_else(|| DEFAULT_TAG.to_string()),
            scores,
        });
    }
    let registry = match registry {
        Some(r) => r,
        None => resolve_registry(Vec::new(), sidecar)?,
    };
    ScoreMatrix::new(registry, records)
}

fn label_token(label: Label) -> &'static str {
    match label {
        Label::Real => "0",
        Label::Fake => "1",
    }
}

pub fn write_csv<W: Write>(matrix: &ScoreMatrix, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = CSV_FIXED_COLUMNS.to_vec();
    header.extend(matrix.registry.iter().map(|d| d.name.as_str()));
    wtr.write_record(&header)?;
    for r in &matrix.records {
        let mut row = vec![
            r.sample_id.clone(),
            r.benchmark.clone(),
            r.subset.clone(),
            label_token(r.label).to_string(),
        ];
        row.extend(r.scores.iter().map(|s| s.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| FuseError::io("<csv output>", e))?;
    Ok(())
}

pub fn write_jsonl<W: Write>(matrix: &ScoreMatrix, mut writer: W) -> Result<()> {
    for r in &matrix.records {
        let mut scores = serde_json::Map::new();
        for (det, &value) in matrix.registry.iter().zip(&r.scores) {
            scores.insert(det.name.clone(), serde_json::Value::from(value));
        }
        let line = serde_json::json!({
            "sample_id": r.sample_id,
            "benchmark": r.benchmark,
            "subset": r.subset,
            "label": r.label,
            "scores": scores,
        });
        serde_json::to_writer(&mut writer, &line)?;
        writer
            .write_all(b"\n")
            .map_err(|e| FuseError::io("<jsonl output>", e))?;
    }
    Ok(())
}

pub fn registry_document(matrix: &ScoreMatrix) -> Registry {
    Registry {
        detectors: matrix.registry.clone(),
    }
}

/// Draws exactly `per_class_per_subset` real and as many fake records from
/// every subset, uniformly without replacement. Output keeps input order.
pub fn sample_balanced(
    matrix: &ScoreMatrix,
    per_class_per_subset: usize,
    seed: u64,
) -> Result<ScoreMatrix> {
    let mut strata: BTreeMap<(&str, Label), Vec<usize>> = BTreeMap::new();
    let mut subsets: HashMap<&str, ()> = HashMap::new();
    for (i, r) in matrix.records.iter().enumerate() {
        subsets.insert(r.subset.as_str(), ());
        strata
            .entry((r.subset.as_str(), r.label))
            .or_default()
            .push(i);
    }
    for subset in subsets.keys() {
        for label in [Label::Real, Label::Fake] {
            strata.entry((subset, label)).or_default();
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(strata.len() * per_class_per_subset);
    for ((subset, label), members) in &strata {
        if members.len() < per_class_per_subset {
            return Err(FuseError::Understocked {
                subset: subset.to_string(),
                class: label.to_string(),
                needed: per_class_per_subset,
                available: members.len(),
            });
        }
        chosen.extend(
            index::sample(&mut rng, members.len(), per_class_per_subset)
                .into_iter()
                .map(|k| members[k]),
        );
    }
    chosen.sort_unstable();
    Ok(matrix.select(&chosen))
}
