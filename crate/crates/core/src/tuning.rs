//! Seeded random search over network depth, width and learning rate.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fusion::{FusionError, ModelProvider, SplitFeatures, Targets};
use crate::neuralnet::{self, LossKind, MlpConfig, MlpModel, NnError};
use crate::seed::{derive_rng, derive_seed};

#[derive(Debug, thiserror::Error)]
pub enum TuneError {
    #[error("every trial diverged")]
    AllTrialsDiverged,
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error(transparent)]
    Training(#[from] NnError),
    #[error("trial log {path}: {message}")]
    Log { path: String, message: String },
}

/// Search bounds plus the fixed training-loop settings shared by all trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub n_hidden: (usize, usize),
    pub first_units: (usize, usize),
    pub learning_rate: (f64, f64),
    pub n_samples: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            n_hidden: MlpConfig::N_HIDDEN_RANGE,
            first_units: MlpConfig::UNITS_RANGE,
            learning_rate: MlpConfig::LR_RANGE,
            n_samples: 20,
            max_epochs: 50,
            batch_size: 32,
            patience: 5,
        }
    }
}

impl SearchSpace {
    /// Bounds may be narrowed but never widened beyond the network's ranges.
    pub fn validate(&self) -> Result<(), TuneError> {
        let bad = |m: &str| Err(TuneError::InvalidSpace(m.to_string()));
        let within = |(lo, hi): (usize, usize), (min, max): (usize, usize)| lo <= hi && lo >= min && hi <= max;
        if !within(self.n_hidden, MlpConfig::N_HIDDEN_RANGE) {
            return bad("n_hidden bounds outside [0, 3]");
        }
        if !within(self.first_units, MlpConfig::UNITS_RANGE) {
            return bad("first_units bounds outside [64, 512]");
        }
        let (lo, hi) = self.learning_rate;
        let (min, max) = MlpConfig::LR_RANGE;
        if !(lo <= hi && lo >= min && hi <= max) {
            return bad("learning_rate bounds outside [1e-6, 10]");
        }
        if self.n_samples == 0 {
            return bad("n_samples must be >= 1");
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("max_epochs, batch_size and patience must be >= 1");
        }
        Ok(())
    }

    pub fn contains(&self, c: &MlpConfig) -> bool {
        (self.n_hidden.0..=self.n_hidden.1).contains(&c.n_hidden)
            && (self.first_units.0..=self.first_units.1).contains(&c.first_units)
            && (self.learning_rate.0..=self.learning_rate.1).contains(&c.learning_rate)
    }
}

fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.gen_range(lo.ln()..hi.ln()).exp().clamp(lo, hi)
}

/// Configuration of trial `index`; depends only on `(space, seed, index, loss)`.
///
/// Depth is uniform, width and learning rate are log-uniform.
pub fn sample(space: &SearchSpace, seed: u64, index: usize, loss: LossKind) -> MlpConfig {
    let tag = index.to_string();
    let mut rng = derive_rng(seed, &["trial", &tag]);
    let n_hidden = rng.gen_range(space.n_hidden.0..=space.n_hidden.1);
    let (ulo, uhi) = space.first_units;
    let first_units = (log_uniform(&mut rng, (ulo as f64, uhi as f64)).round() as usize).clamp(ulo, uhi);
    let learning_rate = log_uniform(&mut rng, space.learning_rate);
    MlpConfig {
        n_hidden,
        first_units,
        learning_rate,
        loss,
        seed: derive_seed(seed, &["trial-init", &tag]),
        max_epochs: space.max_epochs,
        batch_size: space.batch_size,
        patience: space.patience,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_index: usize,
    pub config: MlpConfig,
    /// `None` when training diverged.
    pub dev_metric: Option<f64>,
    pub diverged: bool,
    pub train_seconds: f64,
}

/// Whether larger dev metric values are better.
fn higher_is_better(loss: LossKind) -> bool {
    loss == LossKind::BinaryNll
}

/// Dev accuracy (classification) or dev MAE (regression) of `probs`.
pub fn dev_metric(loss: LossKind, probs: &[f64], targets: &[f64]) -> f64 {
    let n = probs.len() as f64;
    match loss {
        LossKind::BinaryNll => {
            let hits = probs.iter().zip(targets).filter(|(&p, &y)| (p >= 0.5) == (y >= 0.5)).count();
            hits as f64 / n
        }
        LossKind::Mae => probs.iter().zip(targets).map(|(p, y)| (p - y).abs()).sum::<f64>() / n,
    }
}

/// Trains `config` and scores it on dev. `Ok(None)` means training diverged.
pub fn evaluate_config(config: &MlpConfig, data: &SplitFeatures, targets: &Targets) -> Result<Option<(f64, MlpModel)>, NnError> {
    match neuralnet::train(config, &data.train, &targets.train, &data.dev, &targets.dev) {
        Ok(model) => {
            let probs = model.predict_proba(&data.dev)?;
            Ok(Some((dev_metric(config.loss, &probs, &targets.dev), model)))
        }
        Err(NnError::NonFiniteLoss { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Incrementally written JSONL of finished trials.
pub struct TrialLog {
    path: PathBuf,
    file: Mutex<std::fs::File>,
    completed: BTreeMap<usize, TrialResult>,
}

impl TrialLog {
    pub fn open(path: &Path) -> Result<TrialLog, TuneError> {
        let err = |message: String| TuneError::Log { path: path.display().to_string(), message };
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
        }
        let mut completed = BTreeMap::new();
        if path.exists() {
            let file = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| err(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                // a torn last line is simply rerun
                if let Ok(r) = serde_json::from_str::<TrialResult>(&line) {
                    completed.insert(r.trial_index, r);
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| err(e.to_string()))?;
        let bytes = std::fs::read(path).map_err(|e| err(e.to_string()))?;
        if bytes.last().is_some_and(|&b| b != b'\n') {
            file.write_all(b"\n").map_err(|e| err(e.to_string()))?;
        }
        Ok(TrialLog { path: path.to_path_buf(), file: Mutex::new(file), completed })
    }

    pub fn completed(&self) -> &BTreeMap<usize, TrialResult> {
        &self.completed
    }

    fn append(&self, r: &TrialResult) -> Result<(), TuneError> {
        let mut line = serde_json::to_string(r).expect("trial serializes");
        line.push('\n');
        let mut f = self.file.lock().unwrap();
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| TuneError::Log { path: self.path.display().to_string(), message: e.to_string() })
    }
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub best: MlpConfig,
    pub best_index: usize,
    pub best_metric: f64,
    /// Sorted by trial index.
    pub trials: Vec<TrialResult>,
    /// The winning network, unless its trial was restored from a log.
    pub best_model: Option<MlpModel>,
}

fn better(loss: LossKind, a: (f64, usize), b: (f64, usize)) -> bool {
    let (ma, ia) = a;
    let (mb, ib) = b;
    if ma == mb {
        return ia < ib;
    }
    if higher_is_better(loss) {
        ma > mb
    } else {
        ma < mb
    }
}

/// Best finite trial; ties go to the lower trial index.
pub fn select_best(trials: &[TrialResult], loss: LossKind) -> Result<&TrialResult, TuneError> {
    let mut winner: Option<&TrialResult> = None;
    for r in trials {
        let Some(metric) = r.dev_metric.filter(|m| m.is_finite() && !r.diverged) else { continue };
        if winner.is_none_or(|w| better(loss, (metric, r.trial_index), (w.dev_metric.unwrap(), w.trial_index))) {
            winner = Some(r);
        }
    }
    winner.ok_or(TuneError::AllTrialsDiverged)
}

/// Runs `space.n_samples` trials (skipping any already in `log`) and picks the
/// best dev metric; ties go to the lower trial index.
pub fn tune(
    space: &SearchSpace,
    seed: u64,
    data: &SplitFeatures,
    targets: &Targets,
    loss: LossKind,
    log: Option<&TrialLog>,
    jobs: usize,
) -> Result<TuneOutcome, TuneError> {
    space.validate()?;
    let pending: Vec<usize> = (0..space.n_samples)
        .filter(|i| log.is_none_or(|l| !l.completed().contains_key(i)))
        .collect();
    let best_model: Mutex<Option<(f64, usize, MlpModel)>> = Mutex::new(None);

    let run = |index: usize| -> Result<TrialResult, TuneError> {
        let config = sample(space, seed, index, loss);
        let started = Instant::now();
        let scored = evaluate_config(&config, data, targets)?;
        let result = TrialResult {
            trial_index: index,
            config,
            dev_metric: scored.as_ref().map(|(m, _)| *m),
            diverged: scored.is_none(),
            train_seconds: started.elapsed().as_secs_f64(),
        };
        if let Some((metric, model)) = scored {
            let mut slot = best_model.lock().unwrap();
            if slot.as_ref().is_none_or(|(m, i, _)| better(loss, (metric, index), (*m, *i))) {
                *slot = Some((metric, index, model));
            }
        }
        if let Some(log) = log {
            log.append(&result)?;
        }
        Ok(result)
    };

    let fresh: Vec<TrialResult> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| TuneError::InvalidSpace(e.to_string()))?;
        pool.install(|| pending.par_iter().map(|&i| run(i)).collect::<Result<_, _>>())?
    } else {
        pending.iter().map(|&i| run(i)).collect::<Result<_, _>>()?
    };

    let mut trials: Vec<TrialResult> = fresh;
    if let Some(log) = log {
        trials.extend(log.completed().values().filter(|r| r.trial_index < space.n_samples).cloned());
    }
    trials.sort_by_key(|r| r.trial_index);

    let winner = select_best(&trials, loss)?.clone();
    let best_model = best_model
        .into_inner()
        .unwrap()
        .filter(|(_, i, _)| *i == winner.trial_index)
        .map(|(_, _, m)| m);
    Ok(TuneOutcome {
        best_metric: winner.dev_metric.unwrap(),
        best_index: winner.trial_index,
        best: winner.config,
        trials,
        best_model,
    })
}

/// File-name-safe form of a model key, e.g. `early_text-emb_chat-bow`.
pub fn key_slug(key: &str) -> String {
    key.replace(':', "_").replace('+', "-").replace('&', "_")
}

/// Tunes and trains one network per model key.
///
/// With a log directory, trials are journaled to `<dir>/<slug>.jsonl` and
/// resumed; with a checkpoint directory, finished networks are stored as
/// `<dir>/<slug>.mlp1` and reloaded instead of retrained.
pub struct TuningProvider {
    pub space: SearchSpace,
    pub master_seed: u64,
    pub loss: LossKind,
    pub jobs: usize,
    pub trial_log_dir: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub outcomes: HashMap<String, TuneOutcome>,
    models: HashMap<String, MlpModel>,
}

impl TuningProvider {
    pub fn new(space: SearchSpace, master_seed: u64, loss: LossKind) -> Self {
        TuningProvider {
            space,
            master_seed,
            loss,
            jobs: 1,
            trial_log_dir: None,
            checkpoint_dir: None,
            outcomes: HashMap::new(),
            models: HashMap::new(),
        }
    }

    pub fn seed_for(&self, key: &str) -> u64 {
        derive_seed(self.master_seed, &["tune", key])
    }

    fn fetch(&mut self, key: &str, data: &SplitFeatures, targets: &Targets) -> Result<MlpModel, TuneError> {
        let slug = key_slug(key);
        let ckpt = self.checkpoint_dir.as_ref().map(|d| d.join(format!("{slug}.mlp1")));
        if let Some(path) = ckpt.as_ref().filter(|p| p.exists()) {
            let model = neuralnet::load_checkpoint(path)?;
            if model.input_dim() == data.train.n_cols() {
                return Ok(model);
            }
            log::warn!("{}: input dim changed, retraining", path.display());
        }
        let log = match &self.trial_log_dir {
            Some(dir) => Some(TrialLog::open(&dir.join(format!("{slug}.jsonl")))?),
            None => None,
        };
        let outcome = tune(&self.space, self.seed_for(key), data, targets, self.loss, log.as_ref(), self.jobs)?;
        let model = match &outcome.best_model {
            Some(m) => m.clone(),
            None => neuralnet::train(&outcome.best, &data.train, &targets.train, &data.dev, &targets.dev)?,
        };
        if let Some(path) = &ckpt {
            neuralnet::save_checkpoint(path, &model)?;
        }
        self.outcomes.insert(key.to_string(), TuneOutcome { best_model: None, ..outcome });
        Ok(model)
    }
}

impl ModelProvider for TuningProvider {
    fn model_for(&mut self, key: &str, data: &SplitFeatures, targets: &Targets) -> Result<MlpModel, FusionError> {
        if let Some(m) = self.models.get(key) {
            return Ok(m.clone());
        }
        let model = self.fetch(key, data, targets).map_err(|e| match e {
            TuneError::Training(nn) => FusionError::Training(nn),
            other => FusionError::Provider(other.to_string()),
        })?;
        self.models.insert(key.to_string(), model.clone());
        Ok(model)
    }
}
