//! Modalities, fusion plans and the early/late combinators.
//!
//! A modality pairs a text source with a featurizer. Early fusion
//! concatenates modality features and trains one network; late fusion trains
//! one network per modality and averages their probabilities.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::featurize::FeatureMatrix;
use crate::neuralnet::{self, MlpConfig, MlpModel, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TextSource {
    OriginalText,
    LlmResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Featurizer {
    Embedding,
    BoW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Modality {
    pub text_source: TextSource,
    pub featurizer: Featurizer,
}

impl Modality {
    pub const TEXT_EMB: Modality = Modality { text_source: TextSource::OriginalText, featurizer: Featurizer::Embedding };
    pub const TEXT_BOW: Modality = Modality { text_source: TextSource::OriginalText, featurizer: Featurizer::BoW };
    pub const CHAT_EMB: Modality = Modality { text_source: TextSource::LlmResponse, featurizer: Featurizer::Embedding };
    pub const CHAT_BOW: Modality = Modality { text_source: TextSource::LlmResponse, featurizer: Featurizer::BoW };

    pub const ALL: [Modality; 4] = [Self::TEXT_EMB, Self::TEXT_BOW, Self::CHAT_EMB, Self::CHAT_BOW];

    fn source_token(self) -> &'static str {
        match self.text_source {
            TextSource::OriginalText => "text",
            TextSource::LlmResponse => "chat",
        }
    }

    fn featurizer_token(self) -> &'static str {
        match self.featurizer {
            Featurizer::Embedding => "emb",
            Featurizer::BoW => "bow",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.source_token(), self.featurizer_token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionMode {
    Single,
    Early,
    Late,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FusionPlan {
    modalities: Vec<Modality>,
    mode: FusionMode,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("plan syntax error at position {position}: {message}")]
pub struct PlanSyntaxError {
    pub position: usize,
    pub message: String,
}

impl FusionPlan {
    pub fn new(mode: FusionMode, modalities: Vec<Modality>) -> Result<FusionPlan, FusionError> {
        let ok = match mode {
            FusionMode::Single => modalities.len() == 1,
            FusionMode::Early | FusionMode::Late => modalities.len() >= 2,
        };
        if !ok {
            return Err(FusionError::InvalidPlan(format!(
                "{mode:?} fusion over {} modalities",
                modalities.len()
            )));
        }
        for (i, m) in modalities.iter().enumerate() {
            if modalities[..i].contains(m) {
                return Err(FusionError::InvalidPlan(format!("modality {m} listed twice")));
            }
        }
        Ok(FusionPlan { modalities, mode })
    }

    pub fn single(m: Modality) -> FusionPlan {
        FusionPlan { modalities: vec![m], mode: FusionMode::Single }
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    /// Key of the network trained on the concatenation of `modalities`.
    pub fn model_key(modalities: &[Modality]) -> String {
        match modalities {
            [m] => m.to_string(),
            many => format!("early:{}", join(many)),
        }
    }

    /// Keys of every network this plan trains.
    pub fn member_keys(&self) -> Vec<String> {
        match self.mode {
            FusionMode::Single | FusionMode::Early => vec![Self::model_key(&self.modalities)],
            FusionMode::Late => self.modalities.iter().map(|m| m.to_string()).collect(),
        }
    }
}

fn join(ms: &[Modality]) -> String {
    ms.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("&")
}

impl fmt::Display for FusionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            FusionMode::Single => write!(f, "{}", join(&self.modalities)),
            FusionMode::Early => write!(f, "early:{}", join(&self.modalities)),
            FusionMode::Late => write!(f, "late:{}", join(&self.modalities)),
        }
    }
}

/// Parses `[early:|late:] MOD (& MOD)*` with `MOD := (text|chat)+(emb|bow)`.
pub fn parse_plan(s: &str) -> Result<FusionPlan, PlanSyntaxError> {
    let err = |position: usize, message: &str| PlanSyntaxError { position, message: message.to_string() };
    let (mode, mut pos) = if s.starts_with("early:") {
        (FusionMode::Early, 6)
    } else if s.starts_with("late:") {
        (FusionMode::Late, 5)
    } else {
        (FusionMode::Single, 0)
    };
    let mut modalities = Vec::new();
    loop {
        let start = pos;
        let rest = &s[pos..];
        let text_source = if rest.starts_with("text") {
            TextSource::OriginalText
        } else if rest.starts_with("chat") {
            TextSource::LlmResponse
        } else {
            return Err(err(pos, "expected `text` or `chat`"));
        };
        pos += 4;
        if !s[pos..].starts_with('+') {
            return Err(err(pos, "expected `+`"));
        }
        pos += 1;
        let featurizer = if s[pos..].starts_with("emb") {
            Featurizer::Embedding
        } else if s[pos..].starts_with("bow") {
            Featurizer::BoW
        } else {
            return Err(err(pos, "expected `emb` or `bow`"));
        };
        pos += 3;
        let m = Modality { text_source, featurizer };
        if modalities.contains(&m) {
            return Err(err(start, "modality listed twice"));
        }
        modalities.push(m);
        if pos == s.len() {
            break;
        }
        if !s[pos..].starts_with('&') {
            return Err(err(pos, "expected `&` or end of plan"));
        }
        pos += 1;
    }
    match (mode, modalities.len()) {
        (FusionMode::Single, 1) => {}
        (FusionMode::Single, _) => return Err(err(0, "several modalities need an `early:` or `late:` prefix")),
        (_, 1) => return Err(err(0, "fusion needs at least two modalities")),
        _ => {}
    }
    Ok(FusionPlan { modalities, mode })
}

impl FromStr for FusionPlan {
    type Err = PlanSyntaxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_plan(s)
    }
}

/// The fourteen trained rows of the results table, in display order:
/// four singles, then five early and five late combinations.
pub fn standard_plans() -> Vec<FusionPlan> {
    let pairs: [&[Modality]; 5] = [
        &[Modality::TEXT_EMB, Modality::CHAT_EMB],
        &[Modality::TEXT_BOW, Modality::CHAT_BOW],
        &[Modality::TEXT_EMB, Modality::TEXT_BOW],
        &[Modality::CHAT_EMB, Modality::CHAT_BOW],
        &Modality::ALL,
    ];
    let mut plans: Vec<FusionPlan> = Modality::ALL.into_iter().map(FusionPlan::single).collect();
    for mode in [FusionMode::Early, FusionMode::Late] {
        plans.extend(pairs.iter().map(|ms| FusionPlan { modalities: ms.to_vec(), mode }));
    }
    plans
}

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("nothing to fuse")]
    EmptyList,
    #[error("input {index} has different row ids")]
    IdMismatch { index: usize },
    #[error("input {index} has {got} values, expected {expected}")]
    LengthMismatch { index: usize, expected: usize, got: usize },
    #[error("probability {value} outside [0, 1]")]
    OutOfRange { value: f64 },
    #[error("no features for modality {0}")]
    MissingModality(Modality),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Syntax(#[from] PlanSyntaxError),
    #[error(transparent)]
    Training(#[from] NnError),
    #[error("model provider failed: {0}")]
    Provider(String),
}

/// Row-wise concatenation; all inputs must list the same ids in the same order.
pub fn early_fuse(features: &[&FeatureMatrix]) -> Result<FeatureMatrix, FusionError> {
    let first = features.first().ok_or(FusionError::EmptyList)?;
    for (index, m) in features.iter().enumerate().skip(1) {
        if m.ids() != first.ids() {
            return Err(FusionError::IdMismatch { index });
        }
    }
    let n_cols: usize = features.iter().map(|m| m.n_cols()).sum();
    let mut data = Vec::with_capacity(first.n_rows() * n_cols);
    for i in 0..first.n_rows() {
        for m in features {
            data.extend_from_slice(m.row(i));
        }
    }
    FeatureMatrix::new(first.ids().to_vec(), data, n_cols).map_err(|e| FusionError::Provider(e.to_string()))
}

/// Elementwise mean of several probability vectors.
pub fn late_fuse(probabilities: &[&[f64]]) -> Result<Vec<f64>, FusionError> {
    let first = probabilities.first().ok_or(FusionError::EmptyList)?;
    for (index, p) in probabilities.iter().enumerate() {
        if p.len() != first.len() {
            return Err(FusionError::LengthMismatch { index, expected: first.len(), got: p.len() });
        }
        if let Some(&value) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(FusionError::OutOfRange { value });
        }
    }
    let k = probabilities.len() as f64;
    Ok((0..first.len())
        .map(|i| {
            let mean = probabilities.iter().map(|p| p[i]).sum::<f64>() / k;
            // rounding can push the mean of equal values past the inputs
            let (lo, hi) = probabilities
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[i]), hi.max(p[i])));
            mean.clamp(lo, hi)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitFeatures {
    pub train: FeatureMatrix,
    pub dev: FeatureMatrix,
    pub test: FeatureMatrix,
}

impl SplitFeatures {
    fn concat(parts: &[&SplitFeatures]) -> Result<SplitFeatures, FusionError> {
        let pick = |f: fn(&SplitFeatures) -> &FeatureMatrix| -> Result<FeatureMatrix, FusionError> {
            early_fuse(&parts.iter().map(|p| f(p)).collect::<Vec<_>>())
        };
        Ok(SplitFeatures { train: pick(|p| &p.train)?, dev: pick(|p| &p.dev)?, test: pick(|p| &p.test)? })
    }
}

/// Training and dev targets in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub train: Vec<f64>,
    pub dev: Vec<f64>,
}

/// Produces a trained network for a model key and its input data.
pub trait ModelProvider {
    fn model_for(&mut self, key: &str, data: &SplitFeatures, targets: &Targets) -> Result<MlpModel, FusionError>;
}

/// Trains every member with one fixed configuration and memoises by key.
pub struct FixedConfigProvider {
    pub config: MlpConfig,
    trained: HashMap<String, MlpModel>,
}

impl FixedConfigProvider {
    pub fn new(config: MlpConfig) -> Self {
        FixedConfigProvider { config, trained: HashMap::new() }
    }
}

impl ModelProvider for FixedConfigProvider {
    fn model_for(&mut self, key: &str, data: &SplitFeatures, targets: &Targets) -> Result<MlpModel, FusionError> {
        if let Some(m) = self.trained.get(key) {
            return Ok(m.clone());
        }
        let model = neuralnet::train(&self.config, &data.train, &targets.train, &data.dev, &targets.dev)?;
        self.trained.insert(key.to_string(), model.clone());
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutput {
    /// Fused test-set probabilities.
    pub test_proba: Vec<f64>,
    /// Test-set probabilities of each trained member, by model key.
    pub members: Vec<(String, Vec<f64>)>,
}

/// Trains the networks a plan needs and returns its test-set probabilities.
pub fn run_plan(
    plan: &FusionPlan,
    features: &BTreeMap<Modality, SplitFeatures>,
    targets: &Targets,
    provider: &mut dyn ModelProvider,
) -> Result<PlanOutput, FusionError> {
    let inputs: Vec<&SplitFeatures> = plan
        .modalities()
        .iter()
        .map(|m| features.get(m).ok_or(FusionError::MissingModality(*m)))
        .collect::<Result<_, _>>()?;

    let mut members = Vec::new();
    match plan.mode() {
        FusionMode::Single | FusionMode::Early => {
            let data = if inputs.len() == 1 { inputs[0].clone() } else { SplitFeatures::concat(&inputs)? };
            let key = FusionPlan::model_key(plan.modalities());
            let model = provider.model_for(&key, &data, targets)?;
            members.push((key, model.predict_proba(&data.test)?));
        }
        FusionMode::Late => {
            for (m, data) in plan.modalities().iter().zip(&inputs) {
                let key = m.to_string();
                let model = provider.model_for(&key, data, targets)?;
                members.push((key, model.predict_proba(&data.test)?));
            }
        }
    }
    let probs: Vec<&[f64]> = members.iter().map(|(_, p)| p.as_slice()).collect();
    let test_proba = late_fuse(&probs)?;
    Ok(PlanOutput { test_proba, members })
}
