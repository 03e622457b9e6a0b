//! Text classification over original texts and verbose LLM responses.
//!
//! The crate is organised along the experiment pipeline:
//!
//! - [`corpus`] loads labeled datasets and produces train/dev/test splits.
//! - [`llm`] builds task prompts, collects chat-model responses through a
//!   cached client and accounts tokens and latency.
//! - [`featurize`] turns either text source into dense feature rows
//!   (n-gram TF-IDF or precomputed embeddings).
//! - [`neuralnet`] is a small MLP trained with Adam.
//! - [`fusion`] combines modalities by feature concatenation or by
//!   averaging predicted probabilities.
//! - [`tuning`] runs the random hyperparameter search.
//! - [`evaluation`] computes accuracy/UAR, the keyword baseline and the
//!   result tables.

pub mod binio;
pub mod corpus;
pub mod evaluation;
pub mod featurize;
pub mod fusion;
pub mod llm;
pub mod neuralnet;
pub mod seed;
pub mod tuning;

pub use corpus::{BinaryLabel, DatasetSplit, Example, Label, TaskKind, TaskSpec, Trait};
pub use featurize::FeatureMatrix;
pub use fusion::{FusionMode, FusionPlan, Modality};
pub use neuralnet::{LossKind, MlpConfig, MlpModel};
