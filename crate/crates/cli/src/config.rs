//! The run configuration: one JSON document, unknown keys rejected, paths
//! relative to the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use affectfuse_core::featurize::{RESPONSE_NGRAMS, RESPONSE_VOCAB_CAP, TEXT_NGRAMS, TEXT_VOCAB_CAP};
use affectfuse_core::fusion::{parse_plan, standard_plans, Featurizer, TextSource};
use affectfuse_core::llm::ChatParams;
use affectfuse_core::tuning::SearchSpace;
use affectfuse_core::{FusionPlan, TaskSpec, Trait};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("plan {plan:?}: {message}")]
    Plan { plan: String, message: String },
    #[error("missing input file {0}")]
    MissingFile(String),
    #[error("embedding file {path} not found (needed by modality {modality})")]
    MissingEmbeddings { path: String, modality: String },
    #[error("environment variable {0} is not set (or use --mock-llm)")]
    MissingApiKey(&'static str),
}

/// Which problems a task entry yields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskSelector {
    One(TaskSpec),
    /// All five personality traits over one shared file.
    AllTraits,
}

impl TaskSelector {
    pub fn parse(s: &str) -> Result<TaskSelector, ConfigError> {
        if s == "personality" {
            return Ok(TaskSelector::AllTraits);
        }
        s.parse::<TaskSpec>()
            .map(TaskSelector::One)
            .map_err(|e| ConfigError::Invalid(format!("task {s:?}: {e}")))
    }

    pub fn problems(self) -> Vec<TaskSpec> {
        match self {
            TaskSelector::One(t) => vec![t],
            TaskSelector::AllTraits => Trait::ALL.into_iter().map(TaskSpec::personality).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum DataSource {
    Files { train: PathBuf, dev: PathBuf, test: PathBuf },
    Single { file: PathBuf, split: [usize; 3], seed: Option<u64> },
}

impl DataSource {
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            DataSource::Files { train, dev, test } => vec![train, dev, test],
            DataSource::Single { file, .. } => vec![file],
        }
    }

    fn resolve(&mut self, base: &Path) {
        match self {
            DataSource::Files { train, dev, test } => {
                for p in [train, dev, test] {
                    *p = base.join(&*p);
                }
            }
            DataSource::Single { file, .. } => *file = base.join(&*file),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    /// `sentiment`, `suicide`, `personality` (all traits) or `personality:X`.
    pub task: String,
    pub data: DataSource,
    /// Drops longer texts before splitting.
    #[serde(default)]
    pub max_chars: Option<usize>,
}

impl TaskEntry {
    pub fn selector(&self) -> Result<TaskSelector, ConfigError> {
        TaskSelector::parse(&self.task)
    }

    /// Name used for `{dataset}` and for files shared by all of an entry's problems.
    pub fn dataset_name(&self) -> String {
        self.task.replace(':', "_")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub model: String,
    pub temperature: f64,
    pub n_choices: u32,
    pub endpoint_url: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub concurrency: usize,
    /// Sustained request rate; unlimited when absent.
    pub requests_per_second: Option<f64>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        let p = ChatParams::default();
        LlmConfig {
            model: p.model,
            temperature: p.temperature,
            n_choices: p.n_choices,
            endpoint_url: p.endpoint_url,
            timeout_secs: p.timeout_secs,
            max_retries: p.max_retries,
            concurrency: 4,
            requests_per_second: None,
        }
    }
}

impl LlmConfig {
    pub fn chat_params(&self) -> ChatParams {
        ChatParams {
            model: self.model.clone(),
            temperature: self.temperature,
            n_choices: self.n_choices,
            endpoint_url: self.endpoint_url.clone(),
            timeout_secs: self.timeout_secs,
            max_retries: self.max_retries,
        }
    }
}

/// Embedding file templates. `{dataset}` expands to the task entry name and
/// `{problem}` to the problem name (e.g. `personality_E`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub text: Option<String>,
    pub chat: Option<String>,
    /// Width of the deterministic stand-in vectors used with `--mock-embeddings`.
    pub mock_dim: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig { text: None, chat: None, mock_dim: 768 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BowConfig {
    pub text_ngrams: Vec<usize>,
    pub text_vocab_cap: usize,
    pub chat_ngrams: Vec<usize>,
    pub chat_vocab_cap: usize,
}

impl Default for BowConfig {
    fn default() -> Self {
        BowConfig {
            text_ngrams: TEXT_NGRAMS.to_vec(),
            text_vocab_cap: TEXT_VOCAB_CAP,
            chat_ngrams: RESPONSE_NGRAMS.to_vec(),
            chat_vocab_cap: RESPONSE_VOCAB_CAP,
        }
    }
}

impl BowConfig {
    pub fn for_source(&self, source: TextSource) -> (&[usize], usize) {
        match source {
            TextSource::OriginalText => (&self.text_ngrams, self.text_vocab_cap),
            TextSource::LlmResponse => (&self.chat_ngrams, self.chat_vocab_cap),
        }
    }
}

fn default_plans() -> Vec<String> {
    vec!["standard".into()]
}

fn default_true() -> bool {
    true
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tasks: Vec<TaskEntry>,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub embeddings: EmbeddingConfig,
    #[serde(default)]
    pub bow: BowConfig,
    #[serde(default)]
    pub search: SearchSpace,
    /// Plan strings; `standard` stands for the fourteen standard plans.
    #[serde(default = "default_plans")]
    pub plans: Vec<String>,
    /// Adds the keyword baseline row to the reports.
    #[serde(default = "default_true")]
    pub baseline: bool,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mock_llm: bool,
    #[serde(default)]
    pub mock_embeddings: bool,
}

impl RunConfig {
    /// Reads and resolves relative paths against the file's directory.
    pub fn read(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.display().to_string(), message: e.to_string() })?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    /// [`RunConfig::read`] followed by [`RunConfig::validate`].
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let config = RunConfig::read(path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for entry in &mut self.tasks {
            entry.data.resolve(base);
        }
        self.output_dir = base.join(&self.output_dir);
        for template in [&mut self.embeddings.text, &mut self.embeddings.chat].into_iter().flatten() {
            *template = base.join(&*template).to_string_lossy().into_owned();
        }
    }

    pub fn plans(&self) -> Result<Vec<FusionPlan>, ConfigError> {
        let mut out: Vec<FusionPlan> = Vec::new();
        for s in &self.plans {
            let expanded = if s == "standard" {
                standard_plans()
            } else {
                vec![parse_plan(s).map_err(|e| ConfigError::Plan { plan: s.clone(), message: e.to_string() })?]
            };
            for p in expanded {
                if !out.contains(&p) {
                    out.push(p);
                }
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.tasks.is_empty() {
            return invalid("no tasks".into());
        }
        let mut problems = BTreeSet::new();
        for entry in &self.tasks {
            for spec in entry.selector()?.problems() {
                if !problems.insert(spec.to_string()) {
                    return invalid(format!("problem {spec} listed twice"));
                }
            }
            for p in entry.data.paths() {
                if !p.is_file() {
                    return Err(ConfigError::MissingFile(p.display().to_string()));
                }
            }
            if let DataSource::Single { split, .. } = &entry.data {
                if split.contains(&0) {
                    return invalid(format!("task {}: every split size must be >= 1", entry.task));
                }
            }
            if entry.max_chars == Some(0) {
                return invalid(format!("task {}: max_chars must be >= 1", entry.task));
            }
        }
        let plans = self.plans()?;
        if plans.is_empty() {
            return invalid("no plans".into());
        }
        self.search.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.llm.chat_params().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.llm.concurrency == 0 {
            return invalid("llm.concurrency must be >= 1".into());
        }
        if self.llm.requests_per_second.is_some_and(|r| r.is_nan() || r <= 0.0) {
            return invalid("llm.requests_per_second must be positive".into());
        }
        for (ngrams, cap, name) in [
            (&self.bow.text_ngrams, self.bow.text_vocab_cap, "text"),
            (&self.bow.chat_ngrams, self.bow.chat_vocab_cap, "chat"),
        ] {
            if ngrams.is_empty() || ngrams.contains(&0) || cap == 0 {
                return invalid(format!("bow.{name}: n-gram orders must be >= 1 and the cap >= 1"));
            }
        }
        if self.mock_embeddings {
            if self.embeddings.mock_dim == 0 {
                return invalid("embeddings.mock_dim must be >= 1".into());
            }
        } else {
            let used: BTreeSet<TextSource> = plans
                .iter()
                .flat_map(|p| p.modalities().iter())
                .filter(|m| m.featurizer == Featurizer::Embedding)
                .map(|m| m.text_source)
                .collect();
            for source in used {
                if self.embedding_template(source).is_none() {
                    return invalid(format!(
                        "plans use {} embeddings but embeddings.{} is not set (or use --mock-embeddings)",
                        source_name(source),
                        source_name(source)
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn embedding_template(&self, source: TextSource) -> Option<&str> {
        match source {
            TextSource::OriginalText => self.embeddings.text.as_deref(),
            TextSource::LlmResponse => self.embeddings.chat.as_deref(),
        }
    }
}

pub fn source_name(source: TextSource) -> &'static str {
    match source {
        TextSource::OriginalText => "text",
        TextSource::LlmResponse => "chat",
    }
}

pub fn expand_template(template: &str, dataset: &str, problem: &str) -> PathBuf {
    PathBuf::from(template.replace("{dataset}", dataset).replace("{problem}", problem))
}
