//! Labeled datasets, filtering and seeded train/dev/test splitting.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}: {message}")]
    Label { row: usize, message: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("requested {requested} examples but only {available} available")]
    Size { requested: usize, available: usize },
    #[error("split {0} is empty")]
    EmptySplit(&'static str),
    #[error("id {0:?} appears in more than one split")]
    OverlappingSplits(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinaryLabel {
    Negative = 0,
    Positive = 1,
}

impl BinaryLabel {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            BinaryLabel::Positive
        } else {
            BinaryLabel::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == BinaryLabel::Positive
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Binary(BinaryLabel),
    /// A trait score in `[0, 1]`.
    Real(f64),
}

impl Label {
    /// Training target in `[0, 1]`.
    pub fn target(self) -> f64 {
        match self {
            Label::Binary(b) => b as u8 as f64,
            Label::Real(v) => v,
        }
    }

    /// Binary reading of the label; real labels are thresholded at 0.5
    /// (0.5 itself reads as positive).
    pub fn binarize(self) -> BinaryLabel {
        match self {
            Label::Binary(b) => b,
            Label::Real(v) => BinaryLabel::from_bool(v >= 0.5),
        }
    }
}

/// The big-five personality traits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Trait {
    Openness,
    Conscientiousness,
    Extraversion,
    Agreeableness,
    Neuroticism,
}

impl Trait {
    pub const ALL: [Trait; 5] = [
        Trait::Openness,
        Trait::Conscientiousness,
        Trait::Extraversion,
        Trait::Agreeableness,
        Trait::Neuroticism,
    ];

    pub fn letter(self) -> char {
        match self {
            Trait::Openness => 'O',
            Trait::Conscientiousness => 'C',
            Trait::Extraversion => 'E',
            Trait::Agreeableness => 'A',
            Trait::Neuroticism => 'N',
        }
    }

    /// Name substituted into the personality prompt.
    pub fn full_name(self) -> &'static str {
        match self {
            Trait::Openness => "Openness",
            Trait::Conscientiousness => "Conscientiousness",
            Trait::Extraversion => "Extraversion",
            Trait::Agreeableness => "Agreeableness",
            Trait::Neuroticism => "Neuroticism",
        }
    }

    pub fn from_letter(c: char) -> Option<Trait> {
        Trait::ALL
            .into_iter()
            .find(|t| t.letter() == c.to_ascii_uppercase())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    Sentiment,
    Suicide,
    Personality(Trait),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Binary,
    Real,
}

/// A task together with its label kind and baseline keywords.
///
/// Serialised as `sentiment`, `suicide` or `personality:<letter>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskSpec {
    pub kind: TaskKind,
}

impl TaskSpec {
    pub const SENTIMENT: TaskSpec = TaskSpec { kind: TaskKind::Sentiment };
    pub const SUICIDE: TaskSpec = TaskSpec { kind: TaskKind::Suicide };

    pub fn personality(t: Trait) -> TaskSpec {
        TaskSpec { kind: TaskKind::Personality(t) }
    }

    pub fn label_kind(&self) -> LabelKind {
        match self.kind {
            TaskKind::Sentiment | TaskKind::Suicide => LabelKind::Binary,
            TaskKind::Personality(_) => LabelKind::Real,
        }
    }

    pub fn positive_keyword(&self) -> &'static str {
        self.keywords().0
    }

    pub fn negative_keyword(&self) -> &'static str {
        self.keywords().1
    }

    /// `(positive, negative)` answer words.
    pub fn keywords(&self) -> (&'static str, &'static str) {
        match self.kind {
            TaskKind::Sentiment => ("positive", "negative"),
            TaskKind::Suicide => ("yes", "no"),
            TaskKind::Personality(_) => ("high", "low"),
        }
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TaskKind::Sentiment => f.write_str("sentiment"),
            TaskKind::Suicide => f.write_str("suicide"),
            TaskKind::Personality(t) => write!(f, "personality:{}", t.letter()),
        }
    }
}

impl FromStr for TaskSpec {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sentiment" => Ok(TaskSpec::SENTIMENT),
            "suicide" => Ok(TaskSpec::SUICIDE),
            _ => {
                let letter = s
                    .strip_prefix("personality:")
                    .filter(|rest| rest.chars().count() == 1)
                    .and_then(|rest| rest.chars().next())
                    .and_then(Trait::from_letter);
                letter
                    .map(TaskSpec::personality)
                    .ok_or_else(|| CorpusError::UnknownTask(s.to_string()))
            }
        }
    }
}

impl Serialize for TaskSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TaskSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl DataFormat {
    /// Guesses the format from the file extension (`.csv`, anything else is JSONL).
    pub fn from_path(path: &Path) -> DataFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Jsonl,
        }
    }
}

/// A raw row before the task decides how to read its label(s).
struct RawRow {
    id: Option<String>,
    text: String,
    label: Option<Value>,
    /// Per-trait values keyed by trait letter, for personality files.
    traits: Option<serde_json::Map<String, Value>>,
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io { path: path.display().to_string(), source }
}

fn read_raw_rows(path: &Path, format: DataFormat) -> Result<Vec<RawRow>, CorpusError> {
    match format {
        DataFormat::Jsonl => read_jsonl_rows(path),
        DataFormat::Csv => read_csv_rows(path),
    }
}

fn read_jsonl_rows(path: &Path) -> Result<Vec<RawRow>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = rows.len();
        let parse = |message: String| CorpusError::Parse { row, message };
        let value: Value = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        let Value::Object(mut obj) = value else {
            return Err(parse("expected a JSON object".into()));
        };
        let id = match obj.remove("id") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s),
            Some(other) => Some(other.to_string()),
        };
        let text = match obj.remove("text") {
            Some(Value::String(s)) => s,
            Some(_) => return Err(parse("field `text` must be a string".into())),
            None => return Err(parse("missing field `text`".into())),
        };
        let traits = match obj.remove("labels") {
            Some(Value::Object(map)) => Some(map),
            Some(_) => return Err(parse("field `labels` must be an object".into())),
            None => None,
        };
        let label = obj.remove("label");
        if label.is_none() && traits.is_none() {
            return Err(parse("missing field `label`".into()));
        }
        rows.push(RawRow { id, text, label, traits });
    }
    Ok(rows)
}

fn read_csv_rows(path: &Path) -> Result<Vec<RawRow>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CorpusError::Parse { row: 0, message: e.to_string() })?;
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Parse { row: 0, message: e.to_string() })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let text_col = col("text").ok_or(CorpusError::Parse {
        row: 0,
        message: "missing column `text`".into(),
    })?;
    let id_col = col("id");
    let label_col = col("label");
    let trait_cols: Vec<(char, usize)> = Trait::ALL
        .iter()
        .filter_map(|t| col(&t.letter().to_string()).map(|c| (t.letter(), c)))
        .collect();
    if label_col.is_none() && trait_cols.is_empty() {
        return Err(CorpusError::Parse { row: 0, message: "missing column `label`".into() });
    }

    let mut rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CorpusError::Parse { row, message: e.to_string() })?;
        let field = |c: usize| {
            record.get(c).map(str::to_string).ok_or_else(|| CorpusError::Parse {
                row,
                message: format!("missing field in column {c}"),
            })
        };
        let id = match id_col {
            Some(c) => Some(field(c)?).filter(|s| !s.is_empty()),
            None => None,
        };
        let text = field(text_col)?;
        let label = match label_col {
            Some(c) => Some(Value::String(field(c)?)),
            None => None,
        };
        let traits = if trait_cols.is_empty() {
            None
        } else {
            let mut map = serde_json::Map::new();
            for &(letter, c) in &trait_cols {
                map.insert(letter.to_string(), Value::String(field(c)?));
            }
            Some(map)
        };
        rows.push(RawRow { id, text, label, traits });
    }
    Ok(rows)
}

fn parse_label(value: &Value, task: &TaskSpec, row: usize) -> Result<Label, CorpusError> {
    let bad = |message: String| CorpusError::Label { row, message };
    match task.label_kind() {
        LabelKind::Binary => {
            let (pos, neg) = task.keywords();
            let as_number = match value {
                Value::Number(n) => n.as_f64(),
                Value::String(s) => {
                    let s = s.trim();
                    if s.eq_ignore_ascii_case(pos) {
                        return Ok(Label::Binary(BinaryLabel::Positive));
                    }
                    if s.eq_ignore_ascii_case(neg) {
                        return Ok(Label::Binary(BinaryLabel::Negative));
                    }
                    s.parse::<f64>().ok()
                }
                _ => None,
            };
            match as_number {
                Some(0.0) => Ok(Label::Binary(BinaryLabel::Negative)),
                Some(1.0) => Ok(Label::Binary(BinaryLabel::Positive)),
                _ => Err(bad(format!("binary label must be 0, 1, {pos:?} or {neg:?}, got {value}"))),
            }
        }
        LabelKind::Real => {
            let v = match value {
                Value::Number(n) => n.as_f64(),
                Value::String(s) => s.trim().parse::<f64>().ok(),
                _ => None,
            }
            .ok_or_else(|| bad(format!("expected a decimal label, got {value}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(format!("real label {v} outside [0, 1]")));
            }
            Ok(Label::Real(v))
        }
    }
}

fn synthesized_id(row: usize) -> String {
    format!("{row:06}")
}

fn rows_to_examples(rows: &[RawRow], task: &TaskSpec) -> Result<Vec<Example>, CorpusError> {
    if rows.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let mut seen = HashSet::with_capacity(rows.len());
    let mut out = Vec::with_capacity(rows.len());
    for (row, raw) in rows.iter().enumerate() {
        let label_value = match (task.kind, &raw.traits, &raw.label) {
            (TaskKind::Personality(t), Some(traits), _) => traits
                .get(&t.letter().to_string())
                .ok_or_else(|| CorpusError::Parse {
                    row,
                    message: format!("missing trait {} in `labels`", t.letter()),
                })?,
            (_, _, Some(label)) => label,
            _ => {
                return Err(CorpusError::Parse { row, message: "missing field `label`".into() })
            }
        };
        let label = parse_label(label_value, task, row)?;
        let id = raw.id.clone().unwrap_or_else(|| synthesized_id(row));
        if id.is_empty() {
            return Err(CorpusError::Parse { row, message: "empty id".into() });
        }
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId(id));
        }
        out.push(Example { id, text: raw.text.clone(), label });
    }
    Ok(out)
}

/// Loads a dataset in file order. Missing ids become zero-padded row indices.
pub fn load_dataset(path: &Path, format: DataFormat, task: &TaskSpec) -> Result<Vec<Example>, CorpusError> {
    let rows = read_raw_rows(path, format)?;
    rows_to_examples(&rows, task)
}

/// Loads a personality file once and materialises one dataset per trait,
/// all sharing ids and texts.
pub fn load_personality(path: &Path, format: DataFormat) -> Result<Vec<(Trait, Vec<Example>)>, CorpusError> {
    let rows = read_raw_rows(path, format)?;
    Trait::ALL
        .into_iter()
        .map(|t| rows_to_examples(&rows, &TaskSpec::personality(t)).map(|ex| (t, ex)))
        .collect()
}

/// Writes examples as JSONL (`id`, `text`, `label`).
pub fn write_jsonl<W: Write>(examples: &[Example], mut w: W) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        id: &'a str,
        text: &'a str,
        label: Value,
    }
    for ex in examples {
        let label = match ex.label {
            Label::Binary(b) => Value::from(b as u8),
            Label::Real(v) => Value::from(v),
        };
        serde_json::to_writer(&mut w, &Row { id: &ex.id, text: &ex.text, label })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Keeps the examples whose text has at most `max_chars` characters.
pub fn filter_max_chars(examples: &[Example], max_chars: usize) -> Vec<Example> {
    examples
        .iter()
        .filter(|ex| ex.text.chars().count() <= max_chars)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl DatasetSplit {
    /// Checks that every split is non-empty and that the id sets are disjoint.
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, part) in [("train", &self.train), ("dev", &self.dev), ("test", &self.test)] {
            if part.is_empty() {
                return Err(CorpusError::EmptySplit(name));
            }
        }
        let mut seen = HashSet::new();
        for ex in self.train.iter().chain(&self.dev).chain(&self.test) {
            if !seen.insert(ex.id.as_str()) {
                return Err(CorpusError::OverlappingSplits(ex.id.clone()));
            }
        }
        Ok(())
    }

    pub fn all(&self) -> impl Iterator<Item = &Example> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }
}

/// Seeded shuffle, then the first `n_train`, next `n_dev` and next `n_test`.
pub fn split_dataset(
    examples: &[Example],
    sizes: (usize, usize, usize),
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    let (n_train, n_dev, n_test) = sizes;
    let requested = n_train + n_dev + n_test;
    if requested > examples.len() {
        return Err(CorpusError::Size { requested, available: examples.len() });
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |range: std::ops::Range<usize>| -> Vec<Example> {
        order[range].iter().map(|&i| examples[i].clone()).collect()
    };
    Ok(DatasetSplit {
        train: pick(0..n_train),
        dev: pick(n_train..n_train + n_dev),
        test: pick(n_train + n_dev..requested),
    })
}
