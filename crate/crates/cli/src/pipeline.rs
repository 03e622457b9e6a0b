//! Stage execution with fingerprint stamps.
//!
//! Every step has a fingerprint over the content of its inputs. The
//! fingerprint is written to `stamps/` before the step runs; a step whose
//! stamp matches and whose outputs all exist is skipped. A step whose stamp
//! differs first deletes its previous outputs, so a crash never leaves stale
//! outputs behind a fresh stamp.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use affectfuse_core::corpus::{
    filter_max_chars, load_dataset, load_personality, split_dataset, DataFormat, DatasetSplit, LabelKind,
};
use affectfuse_core::evaluation::{
    baseline_classify, evaluate, report_table, EvalReport, Metric, Predictions, ResultRow, TableFormat,
};
use affectfuse_core::featurize::{
    build_vocab, load_embeddings, lookup, mock_embed, read_fmat, tfidf, DocFreqs, MaxAbsScaler,
};
use affectfuse_core::fusion::{early_fuse, run_plan, Featurizer, FusionError, ModelProvider, SplitFeatures, Targets, TextSource};
use affectfuse_core::llm::{estimate_latency_seconds, CacheStore, Collector, HttpTransport, RateLimiter, Transport};
use affectfuse_core::neuralnet::{self, load_checkpoint, save_checkpoint};
use affectfuse_core::seed::derive_seed;
use affectfuse_core::tuning::{key_slug, tune, TrialLog};
use affectfuse_core::{Example, FeatureMatrix, FusionMode, FusionPlan, LossKind, MlpConfig, MlpModel, Modality, TaskSpec};
use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{expand_template, source_name, ConfigError, DataSource, RunConfig, TaskEntry, TaskSelector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Collect,
    Featurize,
    Tune,
    Train,
    Evaluate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Collect => "collect",
            Stage::Featurize => "featurize",
            Stage::Tune => "tune",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage} stage failed: {source:#}")]
    Stage { stage: Stage, source: anyhow::Error },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 1,
        }
    }

    fn from_stage(stage: Stage, source: anyhow::Error) -> PipelineError {
        match source.downcast::<ConfigError>() {
            Ok(c) => PipelineError::Config(c),
            Err(source) => PipelineError::Stage { stage, source },
        }
    }
}

/// Command-line overrides of the configuration.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub mock_llm: bool,
    pub mock_embeddings: bool,
    /// Parallel tuning trials; all cores when absent.
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    /// Steps that executed, as `stage problem[ key]`.
    pub steps_run: Vec<String>,
    pub steps_cached: usize,
    /// Requests sent to the chat endpoint (or its mock) during this run.
    pub llm_requests: usize,
    pub reports: Vec<PathBuf>,
}

/// Content fingerprint built from length-prefixed parts.
struct Fingerprint(Sha256);

impl Fingerprint {
    fn new(tag: &str) -> Self {
        Fingerprint(Sha256::new()).add(tag.as_bytes())
    }

    fn add(mut self, bytes: &[u8]) -> Self {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    fn add_str(self, s: &str) -> Self {
        self.add(s.as_bytes())
    }

    fn add_json<T: Serialize>(self, value: &T) -> Self {
        self.add(&serde_json::to_vec(value).expect("serializable"))
    }

    fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

fn file_digest(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    affectfuse_core::binio::write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn remove_if_exists(path: &Path) -> anyhow::Result<()> {
    match std::fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e).with_context(|| format!("removing {}", path.display())),
        _ => Ok(()),
    }
}

/// One labeled problem with its split, e.g. `personality_E`.
struct Problem {
    spec: TaskSpec,
    name: String,
    dataset: String,
    split: DatasetSplit,
    data_fp: String,
}

impl Problem {
    fn loss(&self) -> LossKind {
        match self.spec.label_kind() {
            LabelKind::Binary => LossKind::BinaryNll,
            LabelKind::Real => LossKind::Mae,
        }
    }

    fn targets(&self) -> Targets {
        let t = |xs: &[Example]| xs.iter().map(|e| e.label.target()).collect();
        Targets { train: t(&self.split.train), dev: t(&self.split.dev) }
    }

    fn split_parts(&self) -> [(&'static str, &[Example]); 3] {
        [("train", &self.split.train), ("dev", &self.split.dev), ("test", &self.split.test)]
    }
}

/// Examples per problem of one task entry, before splitting.
fn load_entry_files(entry: &TaskEntry, path: &Path) -> anyhow::Result<Vec<(TaskSpec, Vec<Example>)>> {
    let format = DataFormat::from_path(path);
    let loaded = match entry.selector()? {
        TaskSelector::One(spec) => vec![(spec, load_dataset(path, format, &spec)?)],
        TaskSelector::AllTraits => load_personality(path, format)?
            .into_iter()
            .map(|(t, ex)| (TaskSpec::personality(t), ex))
            .collect(),
    };
    Ok(loaded
        .into_iter()
        .map(|(spec, ex)| match entry.max_chars {
            Some(max) => (spec, filter_max_chars(&ex, max)),
            None => (spec, ex),
        })
        .collect())
}

fn load_problems(config: &RunConfig, master: u64) -> anyhow::Result<Vec<Problem>> {
    let mut problems = Vec::new();
    for entry in &config.tasks {
        let dataset = entry.dataset_name();
        let mut fp = Fingerprint::new("data").add_str(&entry.task).add_json(&entry.max_chars);
        for path in entry.data.paths() {
            fp = fp.add_str(&file_digest(path)?);
        }
        let splits: Vec<(TaskSpec, DatasetSplit)> = match &entry.data {
            DataSource::Single { file, split, seed } => {
                let seed = seed.unwrap_or_else(|| derive_seed(master, &["split", &dataset]));
                fp = fp.add_json(split).add(&seed.to_le_bytes());
                load_entry_files(entry, file)?
                    .into_iter()
                    .map(|(spec, ex)| Ok((spec, split_dataset(&ex, (split[0], split[1], split[2]), seed)?)))
                    .collect::<anyhow::Result<_>>()?
            }
            DataSource::Files { train, dev, test } => {
                let (tr, dv, te) = (load_entry_files(entry, train)?, load_entry_files(entry, dev)?, load_entry_files(entry, test)?);
                tr.into_iter()
                    .zip(dv)
                    .zip(te)
                    .map(|(((spec, train), (_, dev)), (_, test))| (spec, DatasetSplit { train, dev, test }))
                    .collect()
            }
        };
        let data_fp = fp.finish();
        for (spec, split) in splits {
            split.validate().with_context(|| format!("task {spec}"))?;
            let name = key_slug(&spec.to_string());
            let data_fp = Fingerprint::new("problem").add_str(&data_fp).add_str(&name).finish();
            problems.push(Problem { spec, name, dataset: dataset.clone(), split, data_fp });
        }
    }
    Ok(problems)
}

#[derive(Serialize, Deserialize)]
struct TextRow {
    id: String,
    text: String,
}

fn write_text_rows(path: &Path, rows: impl Iterator<Item = TextRow>) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, &row)?;
        buf.push(b'\n');
    }
    write_file(path, &buf)
}

fn read_text_rows(path: &Path) -> anyhow::Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {} (run collect first)", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<TextRow>(l).map(|r| (r.id, r.text)).map_err(Into::into))
        .collect()
}

#[derive(Serialize)]
struct UsageSummary {
    n_records: usize,
    prompt_tokens: u64,
    completion_tokens: u64,
    /// Sum over records of the latency model applied to prompt + completion tokens.
    estimated_latency_seconds: f64,
}

#[derive(Serialize, Deserialize)]
struct BestTrial {
    key: String,
    best_index: usize,
    best_metric: f64,
    config: MlpConfig,
    n_trials: usize,
    n_diverged: usize,
}

#[derive(Serialize, Deserialize)]
struct ProblemResults {
    problem: TaskSpec,
    baseline: Option<EvalReport>,
    /// Keyed by plan string, in plan order.
    plans: Vec<(String, EvalReport)>,
}

#[derive(Serialize)]
struct BowFit<'a> {
    vocab: &'a affectfuse_core::featurize::Vocab,
    doc_freqs: &'a DocFreqs,
    scaler: &'a MaxAbsScaler,
}

/// Serves trained networks from `models/<problem>/`.
struct CheckpointProvider {
    dir: PathBuf,
}

impl ModelProvider for CheckpointProvider {
    fn model_for(&mut self, key: &str, data: &SplitFeatures, _targets: &Targets) -> Result<MlpModel, FusionError> {
        let path = self.dir.join(format!("{}.mlp1", key_slug(key)));
        let model = load_checkpoint(&path).map_err(|e| FusionError::Provider(format!("{}: {e} (run train first)", path.display())))?;
        if model.input_dim() != data.test.n_cols() {
            return Err(FusionError::Provider(format!("{}: input dim does not match features", path.display())));
        }
        Ok(model)
    }
}

/// A model key with the modalities its input concatenates.
#[derive(Debug, Clone)]
struct ModelKey {
    key: String,
    modalities: Vec<Modality>,
}

fn model_keys(plans: &[FusionPlan]) -> Vec<ModelKey> {
    let mut out: Vec<ModelKey> = Vec::new();
    let mut push = |mods: Vec<Modality>| {
        let key = FusionPlan::model_key(&mods);
        if !out.iter().any(|k| k.key == key) {
            out.push(ModelKey { key, modalities: mods });
        }
    };
    for plan in plans {
        match plan.mode() {
            FusionMode::Single | FusionMode::Early => push(plan.modalities().to_vec()),
            FusionMode::Late => plan.modalities().iter().for_each(|m| push(vec![*m])),
        }
    }
    out
}

fn modality_slug(m: Modality) -> String {
    key_slug(&m.to_string())
}

struct Runner<'a> {
    config: &'a RunConfig,
    master: u64,
    mock_llm: bool,
    mock_embeddings: bool,
    jobs: usize,
    out: PathBuf,
    plans: Vec<FusionPlan>,
    keys: Vec<ModelKey>,
    modalities: Vec<Modality>,
    summary: RunSummary,
    /// Winning networks from tuning in this process, by (problem, key).
    tuned: HashMap<(String, String), MlpModel>,
}

impl<'a> Runner<'a> {
    fn stamp_path(&self, stage: Stage, parts: &[&str]) -> PathBuf {
        let mut p = self.out.join("stamps").join(stage.to_string());
        for part in parts {
            p = p.join(part);
        }
        p.with_extension("fp")
    }

    /// Runs `work` unless the stamp at `stamp` equals `fp` and every output exists.
    /// A changed fingerprint deletes `outputs` and `stale` first.
    fn step(
        &mut self,
        label: String,
        stamp: PathBuf,
        fp: &str,
        outputs: &[PathBuf],
        stale: &[PathBuf],
        work: impl FnOnce(&mut Self) -> anyhow::Result<()>,
    ) -> anyhow::Result<()> {
        let previous = std::fs::read_to_string(&stamp).ok();
        if previous.as_deref() == Some(fp) && outputs.iter().all(|p| p.exists()) {
            log::info!("{label}: cached");
            self.summary.steps_cached += 1;
            return Ok(());
        }
        if previous.as_deref() != Some(fp) {
            for p in outputs.iter().chain(stale) {
                remove_if_exists(p)?;
            }
            write_file(&stamp, fp.as_bytes())?;
        }
        log::info!("{label}: running");
        work(self)?;
        self.summary.steps_run.push(label);
        Ok(())
    }

    fn needs_responses(&self) -> bool {
        self.config.baseline || self.modalities.iter().any(|m| m.text_source == TextSource::LlmResponse)
    }

    fn cache_path(&self, p: &Problem) -> PathBuf {
        let suffix = if self.mock_llm { "mock-cache" } else { "cache" };
        self.out.join("responses").join(format!("{}.{suffix}.jsonl", p.name))
    }

    fn responses_path(&self, p: &Problem) -> PathBuf {
        self.out.join("responses").join(format!("{}.texts.jsonl", p.name))
    }

    fn collect(&mut self, p: &Problem) -> anyhow::Result<()> {
        let params = self.config.llm.chat_params();
        let fp = Fingerprint::new("collect")
            .add_str(&p.data_fp)
            .add_str(&params.digest())
            .add_json(&self.mock_llm)
            .finish();
        let responses = self.responses_path(p);
        let usage = self.out.join("responses").join(format!("{}.usage.json", p.name));
        let stamp = self.stamp_path(Stage::Collect, &[&p.name]);
        self.step(format!("collect {}", p.name), stamp, &fp, &[responses.clone(), usage.clone()], &[], |r| {
            let cache_path = r.cache_path(p);
            std::fs::create_dir_all(cache_path.parent().unwrap())?;
            let cache = CacheStore::open(&cache_path)?;
            let mock = crate::mock::transport();
            let http;
            let transport: &dyn Transport = if r.mock_llm {
                &mock
            } else {
                if std::env::var(affectfuse_core::llm::API_KEY_ENV).map_or(true, |k| k.is_empty()) {
                    log::warn!("{} is not set; sending requests without a key", affectfuse_core::llm::API_KEY_ENV);
                }
                http = HttpTransport::from_env(Duration::from_secs(params.timeout_secs));
                &http
            };
            let mut collector = Collector::new(transport);
            collector.concurrency = r.config.llm.concurrency;
            collector.rate_limiter = r
                .config
                .llm
                .requests_per_second
                .map(|rps| RateLimiter::new(r.config.llm.concurrency as u32, rps));
            let examples: Vec<Example> = p.split.all().cloned().collect();
            let cached_before = cache.len();
            let result = collector.collect(&examples, &p.spec, &params, &cache);
            // the HTTP transport keeps no count, so a live run reports the responses it added
            r.summary.llm_requests += if r.mock_llm { mock.calls() } else { cache.len() - cached_before };
            let records = result?;
            write_text_rows(&responses, records.iter().map(|c| TextRow { id: c.example_id.clone(), text: c.response.clone() }))?;
            let summary = UsageSummary {
                n_records: records.len(),
                prompt_tokens: records.iter().map(|c| c.prompt_tokens).sum(),
                completion_tokens: records.iter().map(|c| c.completion_tokens).sum(),
                estimated_latency_seconds: records
                    .iter()
                    .map(|c| estimate_latency_seconds(c.prompt_tokens + c.completion_tokens))
                    .sum(),
            };
            write_file(&usage, &serde_json::to_vec_pretty(&summary)?)
        })
    }

    fn feature_paths(&self, p: &Problem, m: Modality) -> [PathBuf; 3] {
        let dir = self.out.join("features").join(&p.name);
        let slug = modality_slug(m);
        ["train", "dev", "test"].map(|s| dir.join(format!("{slug}.{s}.fmat")))
    }

    /// Texts of one source for each split, in split order.
    fn source_texts(&self, p: &Problem, source: TextSource) -> anyhow::Result<[(Vec<String>, Vec<String>); 3]> {
        let responses = match source {
            TextSource::OriginalText => None,
            TextSource::LlmResponse => Some(read_text_rows(&self.responses_path(p))?),
        };
        let mut out: [(Vec<String>, Vec<String>); 3] = Default::default();
        for (slot, (_, part)) in out.iter_mut().zip(p.split_parts()) {
            for ex in part {
                let text = match &responses {
                    None => ex.text.clone(),
                    Some(map) => map.get(&ex.id).cloned().ok_or_else(|| anyhow!("no response for example {}", ex.id))?,
                };
                slot.0.push(ex.id.clone());
                slot.1.push(text);
            }
        }
        Ok(out)
    }

    fn featurize(&mut self, p: &Problem, m: Modality) -> anyhow::Result<()> {
        let mut fp = Fingerprint::new("featurize").add_str(&p.data_fp).add_str(&m.to_string());
        if m.text_source == TextSource::LlmResponse {
            fp = fp.add_str(&file_digest(&self.responses_path(p))?);
        }
        let embedding_file = match m.featurizer {
            Featurizer::BoW => {
                let (ngrams, cap) = self.config.bow.for_source(m.text_source);
                fp = fp.add_json(&ngrams).add_json(&cap);
                None
            }
            Featurizer::Embedding if self.mock_embeddings => {
                fp = fp.add_json(&("mock", self.config.embeddings.mock_dim, self.embed_seed(m.text_source)));
                None
            }
            Featurizer::Embedding => {
                let template = self.config.embedding_template(m.text_source).expect("validated");
                let path = expand_template(template, &p.dataset, &p.name);
                if !path.is_file() {
                    return Err(ConfigError::MissingEmbeddings { path: path.display().to_string(), modality: m.to_string() }.into());
                }
                fp = fp.add_str(&file_digest(&path)?);
                Some(path)
            }
        };
        let fp = fp.finish();
        let outputs = self.feature_paths(p, m);
        let fit_path = outputs[0].with_file_name(format!("{}.fit.json", modality_slug(m)));
        let stamp = self.stamp_path(Stage::Featurize, &[&p.name, &modality_slug(m)]);
        self.step(format!("featurize {} {m}", p.name), stamp, &fp, &outputs.clone(), std::slice::from_ref(&fit_path), |r| {
            let texts = r.source_texts(p, m.text_source)?;
            let matrices: Vec<FeatureMatrix> = match m.featurizer {
                Featurizer::BoW => {
                    let (ngrams, cap) = r.config.bow.for_source(m.text_source);
                    let train_texts = &texts[0].1;
                    let vocab = build_vocab(train_texts, ngrams, cap)?;
                    let df = DocFreqs::fit(train_texts, &vocab);
                    let raw: Vec<FeatureMatrix> = texts
                        .iter()
                        .map(|(ids, t)| tfidf(ids.clone(), t, &vocab, &df))
                        .collect::<Result<_, _>>()?;
                    let scaler = MaxAbsScaler::fit(&raw[0]);
                    write_file(&fit_path, &serde_json::to_vec(&BowFit { vocab: &vocab, doc_freqs: &df, scaler: &scaler })?)?;
                    raw.iter().map(|x| scaler.scale(x)).collect::<Result<_, _>>()?
                }
                Featurizer::Embedding => match &embedding_file {
                    None => {
                        let (dim, seed) = (r.config.embeddings.mock_dim, r.embed_seed(m.text_source));
                        texts
                            .iter()
                            .map(|(ids, t)| mock_embed(ids.clone(), t, dim, seed))
                            .collect::<Result<_, _>>()?
                    }
                    Some(path) => {
                        let table = load_embeddings(path)?;
                        texts
                            .iter()
                            .map(|(ids, _)| lookup(&table, ids).with_context(|| path.display().to_string()))
                            .collect::<Result<_, _>>()?
                    }
                },
            };
            for (path, m) in outputs.iter().zip(&matrices) {
                write_file(path, &m.to_bytes())?;
            }
            Ok(())
        })
    }

    fn embed_seed(&self, source: TextSource) -> u64 {
        derive_seed(self.master, &["embed", source_name(source)])
    }

    fn load_features(&self, p: &Problem, mods: &[Modality]) -> anyhow::Result<SplitFeatures> {
        let mut parts = Vec::new();
        for &m in mods {
            let [tr, dv, te] = self.feature_paths(p, m);
            parts.push([read_fmat(&tr)?, read_fmat(&dv)?, read_fmat(&te)?]);
        }
        let pick = |i: usize| -> anyhow::Result<FeatureMatrix> {
            if parts.len() == 1 {
                return Ok(parts[0][i].clone());
            }
            Ok(early_fuse(&parts.iter().map(|p| &p[i]).collect::<Vec<_>>())?)
        };
        Ok(SplitFeatures { train: pick(0)?, dev: pick(1)?, test: pick(2)? })
    }

    fn features_fp(&self, p: &Problem, mods: &[Modality]) -> anyhow::Result<String> {
        let mut fp = Fingerprint::new("features");
        for &m in mods {
            for path in self.feature_paths(p, m) {
                fp = fp.add_str(&file_digest(&path)?);
            }
        }
        Ok(fp.finish())
    }

    fn problem_seed(&self, p: &Problem) -> u64 {
        derive_seed(self.master, &["tune", &p.name])
    }

    fn best_path(&self, p: &Problem, key: &str) -> PathBuf {
        self.out.join("trials").join(&p.name).join(format!("{}.best.json", key_slug(key)))
    }

    fn model_path(&self, p: &Problem, key: &str) -> PathBuf {
        self.out.join("models").join(&p.name).join(format!("{}.mlp1", key_slug(key)))
    }

    fn tune_fp(&self, p: &Problem, k: &ModelKey) -> anyhow::Result<String> {
        Ok(Fingerprint::new("tune")
            .add_str(&self.features_fp(p, &k.modalities)?)
            .add_json(&self.config.search)
            .add(&self.problem_seed(p).to_le_bytes())
            .add_json(&p.loss())
            .finish())
    }

    fn tune(&mut self, p: &Problem, k: &ModelKey) -> anyhow::Result<()> {
        let fp = self.tune_fp(p, k)?;
        let best = self.best_path(p, &k.key);
        let log_path = self.out.join("trials").join(&p.name).join(format!("{}.jsonl", key_slug(&k.key)));
        let stamp = self.stamp_path(Stage::Tune, &[&p.name, &key_slug(&k.key)]);
        self.step(format!("tune {} {}", p.name, k.key), stamp, &fp, std::slice::from_ref(&best), std::slice::from_ref(&log_path), |r| {
            let data = r.load_features(p, &k.modalities)?;
            let targets = p.targets();
            let log = TrialLog::open(&log_path)?;
            let seed = derive_seed(r.problem_seed(p), &["tune", &k.key]);
            let outcome = tune(&r.config.search, seed, &data, &targets, p.loss(), Some(&log), r.jobs)?;
            let record = BestTrial {
                key: k.key.clone(),
                best_index: outcome.best_index,
                best_metric: outcome.best_metric,
                config: outcome.best.clone(),
                n_trials: outcome.trials.len(),
                n_diverged: outcome.trials.iter().filter(|t| t.diverged).count(),
            };
            write_file(&best, &serde_json::to_vec_pretty(&record)?)?;
            if let Some(model) = outcome.best_model {
                r.tuned.insert((p.name.clone(), k.key.clone()), model);
            }
            Ok(())
        })
    }

    fn train(&mut self, p: &Problem, k: &ModelKey) -> anyhow::Result<()> {
        let best = self.best_path(p, &k.key);
        let fp = Fingerprint::new("train")
            .add_str(&self.tune_fp(p, k)?)
            .add_str(&file_digest(&best).context("run tune first")?)
            .finish();
        let model_path = self.model_path(p, &k.key);
        let stamp = self.stamp_path(Stage::Train, &[&p.name, &key_slug(&k.key)]);
        self.step(format!("train {} {}", p.name, k.key), stamp, &fp, std::slice::from_ref(&model_path), &[], |r| {
            let record: BestTrial = serde_json::from_slice(&std::fs::read(&best)?)?;
            // the winning trial already trained this exact configuration
            let model = match r.tuned.remove(&(p.name.clone(), k.key.clone())) {
                Some(m) if m.config == record.config => m,
                _ => {
                    let data = r.load_features(p, &k.modalities)?;
                    let t = p.targets();
                    neuralnet::train(&record.config, &data.train, &t.train, &data.dev, &t.dev)?
                }
            };
            std::fs::create_dir_all(model_path.parent().unwrap())?;
            save_checkpoint(&model_path, &model)?;
            Ok(())
        })
    }

    fn results_path(&self, p: &Problem) -> PathBuf {
        self.out.join("results").join(format!("{}.json", p.name))
    }

    fn evaluate(&mut self, p: &Problem) -> anyhow::Result<()> {
        let mut fp = Fingerprint::new("evaluate").add_str(&p.data_fp).add_json(&self.config.baseline);
        for plan in &self.plans {
            fp = fp.add_str(&plan.to_string());
        }
        for k in &self.keys {
            fp = fp.add_str(&file_digest(&self.model_path(p, &k.key)).context("run train first")?);
        }
        fp = fp.add_str(&self.features_fp(p, &self.modalities)?);
        if self.config.baseline {
            fp = fp.add_str(&file_digest(&self.responses_path(p))?);
        }
        let fp = fp.finish();
        let out = self.results_path(p);
        let stamp = self.stamp_path(Stage::Evaluate, &[&p.name]);
        self.step(format!("evaluate {}", p.name), stamp, &fp, std::slice::from_ref(&out), &[], |r| {
            let labels: Vec<_> = p.split.test.iter().map(|e| e.label.binarize()).collect();
            let mut features = BTreeMap::new();
            for &m in &r.modalities {
                features.insert(m, r.load_features(p, &[m])?);
            }
            let targets = p.targets();
            let mut provider = CheckpointProvider { dir: r.out.join("models").join(&p.name) };
            let mut plans = Vec::new();
            for plan in &r.plans {
                let output = run_plan(plan, &features, &targets, &mut provider)?;
                let report = evaluate(Predictions::Probabilities(&output.test_proba), &labels, 0.5)
                    .with_context(|| format!("plan {plan}"))?;
                plans.push((plan.to_string(), report));
            }
            let baseline = if r.config.baseline {
                let responses = read_text_rows(&r.responses_path(p))?;
                let outcomes: Vec<_> = p
                    .split
                    .test
                    .iter()
                    .map(|e| responses.get(&e.id).map(|t| baseline_classify(t, &p.spec)).ok_or_else(|| anyhow!("no response for {}", e.id)))
                    .collect::<anyhow::Result<_>>()?;
                Some(evaluate(Predictions::Baseline(&outcomes), &labels, 0.5).context("baseline")?)
            } else {
                None
            };
            let results = ProblemResults { problem: p.spec, baseline, plans };
            write_file(&out, &serde_json::to_vec_pretty(&results)?)
        })
    }

    fn report(&mut self, problems: &[Problem]) -> anyhow::Result<()> {
        let mut fp = Fingerprint::new("report");
        for p in problems {
            fp = fp.add_str(&file_digest(&self.results_path(p)).context("run evaluate first")?);
        }
        let fp = fp.finish();
        let dir = self.out.join("reports");
        let outputs: Vec<PathBuf> = ["report_accuracy.md", "report_uar.md", "report_accuracy.csv", "report_uar.csv"]
            .iter()
            .map(|n| dir.join(n))
            .collect();
        let stamp = self.stamp_path(Stage::Report, &["all"]);
        self.step("report".into(), stamp, &fp, &outputs.clone(), &[], |r| {
            let mut cells = BTreeMap::new();
            for p in problems {
                let results: ProblemResults = serde_json::from_slice(&std::fs::read(r.results_path(p))?)?;
                if let Some(b) = results.baseline {
                    cells.insert((ResultRow::Baseline, results.problem.kind), b);
                }
                for (plan, report) in results.plans {
                    let plan = affectfuse_core::fusion::parse_plan(&plan)?;
                    cells.insert((ResultRow::Plan(plan), results.problem.kind), report);
                }
            }
            let tables = [
                (Metric::Accuracy, TableFormat::Markdown, "Accuracy (%)"),
                (Metric::Uar, TableFormat::Markdown, "Unweighted average recall (%)"),
                (Metric::Accuracy, TableFormat::Csv, ""),
                (Metric::Uar, TableFormat::Csv, ""),
            ];
            for ((metric, format, title), path) in tables.into_iter().zip(&outputs) {
                let table = report_table(&cells, metric, format);
                let body = if title.is_empty() { table } else { format!("## {title}\n\n{table}") };
                write_file(path, body.as_bytes())?;
            }
            Ok(())
        })?;
        self.summary.reports = outputs;
        Ok(())
    }
}

fn prepare(config: &RunConfig, opts: &RunOptions) -> Result<RunConfig, ConfigError> {
    let mut config = config.clone();
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    config.mock_llm |= opts.mock_llm;
    config.mock_embeddings |= opts.mock_embeddings;
    config.validate()?;
    Ok(config)
}

/// Runs every stage up to and including `until`, skipping cached steps.
pub fn run(config: &RunConfig, opts: &RunOptions, until: Stage) -> Result<RunSummary, PipelineError> {
    let config = prepare(config, opts)?;
    let plans = config.plans()?;
    let keys = model_keys(&plans);
    let modalities: Vec<Modality> = plans
        .iter()
        .flat_map(|p| p.modalities().iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let jobs = opts
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let mut runner = Runner {
        config: &config,
        master: config.seed,
        mock_llm: config.mock_llm,
        mock_embeddings: config.mock_embeddings,
        jobs,
        out: config.output_dir.clone(),
        plans,
        keys,
        modalities,
        summary: RunSummary::default(),
        tuned: HashMap::new(),
    };
    let stage_err = |stage: Stage| move |e: anyhow::Error| PipelineError::from_stage(stage, e);
    let problems = load_problems(&config, config.seed).map_err(stage_err(Stage::Collect))?;
    for p in &problems {
        let rows = p.split.all().map(|e| TextRow { id: e.id.clone(), text: e.text.clone() });
        let path = runner.out.join("texts").join(format!("{}.jsonl", p.name));
        write_text_rows(&path, rows).map_err(stage_err(Stage::Collect))?;
    }

    if runner.needs_responses() {
        for p in &problems {
            runner.collect(p).map_err(stage_err(Stage::Collect))?;
        }
    }
    if until >= Stage::Featurize {
        let modalities = runner.modalities.clone();
        for p in &problems {
            for &m in &modalities {
                runner.featurize(p, m).map_err(stage_err(Stage::Featurize))?;
            }
        }
    }
    let keys = runner.keys.clone();
    if until >= Stage::Tune {
        for p in &problems {
            for k in &keys {
                runner.tune(p, k).map_err(stage_err(Stage::Tune))?;
                if until >= Stage::Train {
                    runner.train(p, k).map_err(stage_err(Stage::Train))?;
                }
            }
        }
    }
    if until >= Stage::Evaluate {
        for p in &problems {
            runner.evaluate(p).map_err(stage_err(Stage::Evaluate))?;
        }
    }
    if until >= Stage::Report {
        runner.report(&problems).map_err(stage_err(Stage::Report))?;
    }
    Ok(runner.summary)
}

/// Rewrites every response cache of the configured problems without
/// duplicate records; returns `(path, lines dropped)` per existing cache.
pub fn compact_caches(config: &RunConfig) -> Result<Vec<(PathBuf, usize)>, PipelineError> {
    let mut out = Vec::new();
    for entry in &config.tasks {
        for spec in entry.selector()?.problems() {
            for suffix in ["cache", "mock-cache"] {
                let path = config
                    .output_dir
                    .join("responses")
                    .join(format!("{}.{suffix}.jsonl", key_slug(&spec.to_string())));
                if path.exists() {
                    let dropped = CacheStore::compact(&path).map_err(|e| PipelineError::from_stage(Stage::Collect, e.into()))?;
                    out.push((path, dropped));
                }
            }
        }
    }
    Ok(out)
}
