//! Dense feature rows from text: n-gram TF-IDF or precomputed embeddings.

mod embeddings;
mod matrix;
mod scaler;
mod tfidf;

pub use embeddings::{load_embeddings, lookup, mock_embed, save_embeddings, EmbeddingTable};
pub use matrix::{read_fmat, write_fmat, FeatureMatrix};
pub use scaler::MaxAbsScaler;
pub use tfidf::{build_vocab, ngrams, tfidf, tokenize, DocFreqs, Vocab};

use crate::binio::BinError;

/// Vocabulary settings for the original-text modality: unigrams, 10,000 terms.
pub const TEXT_NGRAMS: &[usize] = &[1];
pub const TEXT_VOCAB_CAP: usize = 10_000;
/// Vocabulary settings for the response modality: 1- to 3-grams, 2,000 terms.
pub const RESPONSE_NGRAMS: &[usize] = &[1, 2, 3];
pub const RESPONSE_VOCAB_CAP: usize = 2_000;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("no n-grams found in the training texts")]
    EmptyCorpus,
    #[error("invalid vocabulary settings: {0}")]
    InvalidVocab(String),
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("{rows} ids for {texts} texts")]
    LengthMismatch { rows: usize, texts: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("malformed file: {0}")]
    Format(#[from] BinError),
    #[error("malformed file: {0}")]
    InvalidContent(String),
    #[error("id {0:?} not found in embedding table")]
    MissingId(String),
    #[error("embedding dimension is zero")]
    DimZero,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
