//! Accuracy, unweighted average recall, the keyword baseline and result tables.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{BinaryLabel, TaskKind, TaskSpec, Trait};
use crate::featurize::tokenize;
use crate::fusion::{standard_plans, FusionMode, FusionPlan, Modality};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("class {0:?} is absent from the ground truth")]
    DegenerateClass(BinaryLabel),
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, predicted: BinaryLabel, actual: BinaryLabel) {
        match (predicted, actual) {
            (BinaryLabel::Positive, BinaryLabel::Positive) => self.tp += 1,
            (BinaryLabel::Positive, BinaryLabel::Negative) => self.fp += 1,
            (BinaryLabel::Negative, BinaryLabel::Negative) => self.tn += 1,
            (BinaryLabel::Negative, BinaryLabel::Positive) => self.fn_ += 1,
        }
    }

    pub fn from_pairs(predicted: &[BinaryLabel], actual: &[BinaryLabel]) -> Result<Self, EvalError> {
        if predicted.len() != actual.len() {
            return Err(EvalError::LengthMismatch { predictions: predicted.len(), labels: actual.len() });
        }
        let mut c = ConfusionCounts::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            c.add(p, a);
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64, EvalError> {
    if c.total() == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

/// `[negative recall, positive recall]`.
pub fn per_class_recall(c: &ConfusionCounts) -> Result<[f64; 2], EvalError> {
    if c.tp + c.fn_ == 0 {
        return Err(EvalError::DegenerateClass(BinaryLabel::Positive));
    }
    if c.tn + c.fp == 0 {
        return Err(EvalError::DegenerateClass(BinaryLabel::Negative));
    }
    Ok([c.tn as f64 / (c.tn + c.fp) as f64, c.tp as f64 / (c.tp + c.fn_) as f64])
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Mean of the two per-class recalls, formed as one exact fraction and
/// rounded once, so that balanced ground truth gives exactly the accuracy.
pub fn uar(c: &ConfusionCounts) -> Result<f64, EvalError> {
    per_class_recall(c)?;
    let (pos, neg) = ((c.tp + c.fn_) as u128, (c.tn + c.fp) as u128);
    let num = c.tp as u128 * neg + c.tn as u128 * pos;
    let den = 2 * pos * neg;
    let g = gcd(num, den).max(1);
    Ok((num / g) as f64 / (den / g) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineOutcome {
    Positive,
    Negative,
    Excluded,
}

/// Reads the answer keyword out of a response; exactly one of the two task
/// keywords must appear as a whole token, otherwise the response is excluded.
pub fn baseline_classify(response: &str, task: &TaskSpec) -> BaselineOutcome {
    let (pos, neg) = task.keywords();
    let tokens: HashSet<String> = tokenize(response).into_iter().collect();
    match (tokens.contains(pos), tokens.contains(neg)) {
        (true, false) => BaselineOutcome::Positive,
        (false, true) => BaselineOutcome::Negative,
        _ => BaselineOutcome::Excluded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub uar: f64,
    pub n_evaluated: usize,
    pub n_excluded: usize,
    /// `[negative, positive]`.
    pub per_class_recall: [f64; 2],
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, Copy)]
pub enum Predictions<'a> {
    Probabilities(&'a [f64]),
    Baseline(&'a [BaselineOutcome]),
}

/// Scores predictions against binary labels. Probabilities at or above
/// `threshold` read as positive; excluded baseline outcomes are not counted.
pub fn evaluate(predictions: Predictions<'_>, labels: &[BinaryLabel], threshold: f64) -> Result<EvalReport, EvalError> {
    let n = match predictions {
        Predictions::Probabilities(p) => p.len(),
        Predictions::Baseline(b) => b.len(),
    };
    if n != labels.len() {
        return Err(EvalError::LengthMismatch { predictions: n, labels: labels.len() });
    }
    let mut counts = ConfusionCounts::default();
    let mut n_excluded = 0;
    for (i, &label) in labels.iter().enumerate() {
        let predicted = match predictions {
            Predictions::Probabilities(p) => BinaryLabel::from_bool(p[i] >= threshold),
            Predictions::Baseline(b) => match b[i] {
                BaselineOutcome::Positive => BinaryLabel::Positive,
                BaselineOutcome::Negative => BinaryLabel::Negative,
                BaselineOutcome::Excluded => {
                    n_excluded += 1;
                    continue;
                }
            },
        };
        counts.add(predicted, label);
    }
    let accuracy = accuracy(&counts)?;
    let per_class_recall = per_class_recall(&counts)?;
    Ok(EvalReport {
        accuracy,
        uar: uar(&counts)?,
        n_evaluated: counts.total() as usize,
        n_excluded,
        per_class_recall,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Uar,
}

impl Metric {
    fn of(self, r: &EvalReport) -> f64 {
        match self {
            Metric::Accuracy => r.accuracy,
            Metric::Uar => r.uar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

/// A row of the results table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ResultRow {
    Baseline,
    Plan(FusionPlan),
}

impl std::fmt::Display for ResultRow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ResultRow::Baseline => f.write_str("baseline"),
            ResultRow::Plan(p) => write!(f, "{p}"),
        }
    }
}

/// Columns of the results table, left to right.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Column {
    Task(TaskKind),
    PersonalityAverage,
}

fn columns() -> Vec<Column> {
    let mut cols = vec![Column::Task(TaskKind::Sentiment), Column::Task(TaskKind::Suicide), Column::PersonalityAverage];
    cols.extend(Trait::ALL.into_iter().map(|t| Column::Task(TaskKind::Personality(t))));
    cols
}

fn cell(results: &BTreeMap<(ResultRow, TaskKind), EvalReport>, row: &ResultRow, col: Column, metric: Metric) -> Option<f64> {
    match col {
        Column::Task(kind) => results.get(&(row.clone(), kind)).map(|r| metric.of(r)),
        Column::PersonalityAverage => {
            let values: Option<Vec<f64>> = Trait::ALL
                .into_iter()
                .map(|t| results.get(&(row.clone(), TaskKind::Personality(t))).map(|r| metric.of(r)))
                .collect();
            values.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        }
    }
}

fn ordered_rows(results: &BTreeMap<(ResultRow, TaskKind), EvalReport>) -> Vec<ResultRow> {
    let present: HashSet<&ResultRow> = results.keys().map(|(r, _)| r).collect();
    let mut rows: Vec<ResultRow> = std::iter::once(ResultRow::Baseline)
        .chain(standard_plans().into_iter().map(ResultRow::Plan))
        .filter(|r| present.contains(r))
        .collect();
    let mut extra: Vec<ResultRow> = present.into_iter().filter(|r| !rows.contains(r)).cloned().collect();
    extra.sort();
    rows.extend(extra);
    rows
}

fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// Renders one metric as a table: the baseline and plan rows that have
/// results, one column per task plus the personality average. Values are
/// percentages with two decimals; missing cells read `--`. In Markdown the
/// best value of each column is bold.
pub fn report_table(results: &BTreeMap<(ResultRow, TaskKind), EvalReport>, metric: Metric, format: TableFormat) -> String {
    let rows = ordered_rows(results);
    let cols = columns();
    let values: Vec<Vec<Option<String>>> = rows
        .iter()
        .map(|r| cols.iter().map(|&c| cell(results, r, c, metric).map(percent)).collect())
        .collect();
    let best: Vec<Option<f64>> = (0..cols.len())
        .map(|j| {
            values
                .iter()
                .filter_map(|row| row[j].as_ref().map(|s| s.parse::<f64>().unwrap()))
                .reduce(f64::max)
        })
        .collect();

    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            out.push_str("| Text Emb | Text BoW | Chat Emb | Chat BoW | Fusion | Sentiment | Suicide | Pers. Avg | O | C | E | A | N |\n");
            out.push_str("|:-:|:-:|:-:|:-:|:-|-:|-:|-:|-:|-:|-:|-:|-:|\n");
            for (row, vals) in rows.iter().zip(&values) {
                let (marks, fusion) = match row {
                    ResultRow::Baseline => (vec![""; 4], "Baseline"),
                    ResultRow::Plan(p) => (
                        Modality::ALL.iter().map(|m| if p.modalities().contains(m) { "✓" } else { "" }).collect(),
                        match p.mode() {
                            FusionMode::Single => "--",
                            FusionMode::Early => "Early",
                            FusionMode::Late => "Late",
                        },
                    ),
                };
                out.push('|');
                for m in marks {
                    let _ = write!(out, " {m} |");
                }
                let _ = write!(out, " {fusion} |");
                for (j, v) in vals.iter().enumerate() {
                    match v {
                        Some(s) if best[j] == Some(s.parse::<f64>().unwrap()) => {
                            let _ = write!(out, " **{s}** |");
                        }
                        Some(s) => {
                            let _ = write!(out, " {s} |");
                        }
                        None => out.push_str(" -- |"),
                    }
                }
                out.push('\n');
            }
        }
        TableFormat::Csv => {
            out.push_str("plan,sentiment,suicide,personality_avg,O,C,E,A,N\n");
            for (row, vals) in rows.iter().zip(&values) {
                out.push_str(&row.to_string());
                for v in vals {
                    out.push(',');
                    out.push_str(v.as_deref().unwrap_or("--"));
                }
                out.push('\n');
            }
        }
    }
    out
}
