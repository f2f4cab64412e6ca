//! Accuracy reports and prompt-grid selection.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::baseline::{majority_vote, LogisticModel};
use crate::error::{FuseError, Result};
use crate::score::{Label, ScoreMatrix};
use crate::tree::FuzzyTree;

/// Anything that maps a score vector to a label.
pub trait LabelPredictor: Sync {
    /// Detector names the predictor was built for, when it cares.
    fn detector_names(&self) -> Option<&[String]> {
        None
    }

    fn arity(&self) -> Option<usize>;

    fn predict_label(&self, features: &[f64]) -> Result<Label>;
}

impl LabelPredictor for FuzzyTree {
    fn detector_names(&self) -> Option<&[String]> {
        Some(&self.detectors)
    }

    fn arity(&self) -> Option<usize> {
        Some(self.detectors.len())
    }

    fn predict_label(&self, features: &[f64]) -> Result<Label> {
        Ok(self.predict(features)?.label)
    }
}

impl LabelPredictor for LogisticModel {
    fn arity(&self) -> Option<usize> {
        Some(self.weights.len())
    }

    fn predict_label(&self, features: &[f64]) -> Result<Label> {
        Ok(self.predict(features)?.1)
    }
}

/// Unweighted majority vote over all detectors.
pub struct MajorityVote;

impl LabelPredictor for MajorityVote {
    fn arity(&self) -> Option<usize> {
        None
    }

    fn predict_label(&self, features: &[f64]) -> Result<Label> {
        Ok(majority_vote(features))
    }
}

/// One detector thresholded at 0.5.
pub struct SingleDetector {
    pub index: usize,
}

impl LabelPredictor for SingleDetector {
    fn arity(&self) -> Option<usize> {
        None
    }

    fn predict_label(&self, features: &[f64]) -> Result<Label> {
        features
            .get(self.index)
            .map(|&s| Label::from_score(s))
            .ok_or_else(|| FuseError::Registry(format!("no detector at index {}", self.index)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkAccuracy {
    pub benchmark: String,
    pub accuracy: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// In order of first appearance.
    pub per_benchmark: Vec<BenchmarkAccuracy>,
    /// Sample-weighted accuracy over all benchmarks.
    pub overall: f64,
    /// Unweighted mean of the per-benchmark accuracies.
    pub avg: f64,
    /// Population standard deviation of the per-benchmark accuracies.
    pub std: f64,
    /// Mean accuracy over the perturbed matrices, when given.
    pub robustness: Option<f64>,
}

impl EvalReport {
    /// Aggregates per-benchmark `(tag, accuracy, samples)` triples.
    pub fn from_benchmarks(
        per_benchmark: Vec<BenchmarkAccuracy>,
        robustness: Option<f64>,
    ) -> Result<EvalReport> {
        if per_benchmark.is_empty() {
            return Err(FuseError::Precondition("no benchmarks to report".into()));
        }
        let total: usize = per_benchmark.iter().map(|b| b.samples).sum();
        if total == 0 {
            return Err(FuseError::Precondition("benchmarks hold no samples".into()));
        }
        let overall = per_benchmark
            .iter()
            .map(|b| b.accuracy * b.samples as f64)
            .sum::<f64>()
            / total as f64;
        let count = per_benchmark.len() as f64;
        let avg = per_benchmark.iter().map(|b| b.accuracy).sum::<f64>() / count;
        let var = per_benchmark
            .iter()
            .map(|b| (b.accuracy - avg).powi(2))
            .sum::<f64>()
            / count;
        Ok(EvalReport {
            per_benchmark,
            overall,
            avg,
            std: var.sqrt(),
            robustness,
        })
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("finite report values");
        text.push('\n');
        text
    }
}

fn check_predictor(predictor: &dyn LabelPredictor, matrix: &ScoreMatrix) -> Result<()> {
    if let Some(names) = predictor.detector_names() {
        let found = matrix.detector_names();
        if found != names {
            return Err(FuseError::Registry(format!(
                "predictor expects detectors {names:?}, matrix has {found:?}"
            )));
        }
    }
    if let Some(arity) = predictor.arity() {
        if arity != matrix.n_detectors() {
            return Err(FuseError::Registry(format!(
                "predictor expects {arity} scores, matrix has {}",
                matrix.n_detectors()
            )));
        }
    }
    Ok(())
}

/// Fraction of records whose predicted label matches the truth.
pub fn accuracy(predictor: &dyn LabelPredictor, matrix: &ScoreMatrix) -> Result<f64> {
    check_predictor(predictor, matrix)?;
    if matrix.is_empty() {
        return Err(FuseError::Precondition(
            "accuracy of an empty matrix".into(),
        ));
    }
    let mut correct = 0usize;
    for r in matrix.records() {
        if predictor.predict_label(&r.scores)? == r.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / matrix.n_samples() as f64)
}

/// Per-benchmark accuracy (grouped by each record's benchmark tag), the
/// aggregates over them, and robustness over `perturbed` if given.
pub fn evaluate(
    predictor: &dyn LabelPredictor,
    matrices: &[ScoreMatrix],
    perturbed: Option<&[ScoreMatrix]>,
) -> Result<EvalReport> {
    if matrices.is_empty() {
        return Err(FuseError::Precondition("no matrices to evaluate".into()));
    }
    let mut tally: Vec<(String, usize, usize)> = Vec::new();
    for matrix in matrices {
        check_predictor(predictor, matrix)?;
        for r in matrix.records() {
            let hit = usize::from(predictor.predict_label(&r.scores)? == r.label);
            match tally.iter_mut().find(|(tag, _, _)| *tag == r.benchmark) {
                Some(entry) => {
                    entry.1 += hit;
                    entry.2 += 1;
                }
                None => tally.push((r.benchmark.clone(), hit, 1)),
            }
        }
    }
    let per_benchmark = tally
        .into_iter()
        .map(|(benchmark, correct, samples)| BenchmarkAccuracy {
            benchmark,
            accuracy: correct as f64 / samples as f64,
            samples,
        })
        .collect();
    let robustness = match perturbed {
        None => None,
        Some([]) => None,
        Some(list) => {
            let accs = list
                .iter()
                .map(|m| accuracy(predictor, m))
                .collect::<Result<Vec<f64>>>()?;
            Some(accs.iter().sum::<f64>() / accs.len() as f64)
        }
    };
    EvalReport::from_benchmarks(per_benchmark, robustness)
}

/// Aligned text table: one row per method, columns per benchmark followed
/// by Overall, Avg., Std. and Robustness, all in percent.
pub fn format_table(rows: &[(String, EvalReport)]) -> String {
    let mut benches: Vec<String> = Vec::new();
    for (_, report) in rows {
        for b in &report.per_benchmark {
            if !benches.contains(&b.benchmark) {
                benches.push(b.benchmark.clone());
            }
        }
    }
    let mut header: Vec<String> = vec!["Method".into()];
    header.extend(benches.iter().cloned());
    header.extend(["Overall", "Avg.", "Std.", "Robustness"].map(String::from));

    let pct = |v: f64| format!("{:.2}", 100.0 * v);
    let mut table: Vec<Vec<String>> = vec![header];
    for (name, report) in rows {
        let mut line = vec![name.clone()];
        for b in &benches {
            line.push(
                report
                    .per_benchmark
                    .iter()
                    .find(|x| &x.benchmark == b)
                    .map_or("-".into(), |x| pct(x.accuracy)),
            );
        }
        line.push(pct(report.overall));
        line.push(pct(report.avg));
        line.push(pct(report.std));
        line.push(report.robustness.map_or("-".into(), pct));
        table.push(line);
    }

    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| {
                if c == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

pub const SYSTEM_PROMPTS: u8 = 6;
pub const QUESTION_PROMPTS: u8 = 7;
pub const OUTPUT_FORMATS: u8 = 4;

/// Accuracy of one (system prompt, question, output format) combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptGridRecord {
    pub system_idx: u8,
    pub question_idx: u8,
    pub output_idx: u8,
    pub accuracy: f64,
}

impl PromptGridRecord {
    pub fn key(&self) -> (u8, u8, u8) {
        (self.system_idx, self.question_idx, self.output_idx)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let ranges = [
            ("system_idx", self.system_idx, SYSTEM_PROMPTS),
            ("question_idx", self.question_idx, QUESTION_PROMPTS),
            ("output_idx", self.output_idx, OUTPUT_FORMATS),
        ];
        for (field, v, hi) in ranges {
            if v < 1 || v > hi {
                return Err(format!("{field} {v} outside 1..={hi}"));
            }
        }
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(format!("accuracy {} outside [0, 1]", self.accuracy));
        }
        Ok(())
    }
}

/// Best-accuracy prompt; ties go to the smallest (system, question, output).
pub fn select_prompt(grid: &[PromptGridRecord]) -> Result<PromptGridRecord> {
    let mut seen = HashSet::new();
    for r in grid {
        if !seen.insert(r.key()) {
            return Err(FuseError::Precondition(format!(
                "duplicate prompt configuration {:?}",
                r.key()
            )));
        }
    }
    grid.iter()
        .copied()
        .reduce(|best, r| {
            if r.accuracy > best.accuracy || (r.accuracy == best.accuracy && r.key() < best.key()) {
                r
            } else {
                best
            }
        })
        .ok_or_else(|| FuseError::Precondition("empty prompt grid".into()))
}

/// CSV `system_idx,question_idx,output_idx,accuracy`, sorted by index.
pub fn export_heatmap(grid: &[PromptGridRecord]) -> String {
    let mut sorted = grid.to_vec();
    sorted.sort_by_key(|r| r.key());
    let mut out = String::from("system_idx,question_idx,output_idx,accuracy\n");
    for r in sorted {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.system_idx, r.question_idx, r.output_idx, r.accuracy
        );
    }
    out
}

pub fn read_prompt_grid<R: Read>(reader: R) -> Result<Vec<PromptGridRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<PromptGridRecord>().enumerate() {
        let record = row.map_err(|e| FuseError::row(i + 1, "*", e.to_string()))?;
        record
            .validate()
            .map_err(|msg| FuseError::row(i + 1, "*", msg))?;
        out.push(record);
    }
    Ok(out)
}
