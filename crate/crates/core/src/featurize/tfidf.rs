use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureMatrix};

/// Lowercased runs of Unicode alphanumerics.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// All `n`-grams of `tokens`, joined by a single space.
pub fn ngrams(tokens: &[String], n: usize) -> impl Iterator<Item = String> + '_ {
    let count = if n == 0 { 0 } else { (tokens.len() + 1).saturating_sub(n) };
    (0..count).map(move |i| tokens[i..i + n].join(" "))
}

fn for_each_ngram(tokens: &[String], n_range: &BTreeSet<usize>, mut f: impl FnMut(String)) {
    for &n in n_range {
        ngrams(tokens, n).for_each(&mut f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    terms: Vec<String>,
    n_range: BTreeSet<usize>,
    size_cap: usize,
    term_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    terms: Vec<String>,
    n_range: BTreeSet<usize>,
    size_cap: usize,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        let term_index = r.terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { terms: r.terms, n_range: r.n_range, size_cap: r.size_cap, term_index }
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { terms: v.terms, n_range: v.n_range, size_cap: v.size_cap }
    }
}

impl Vocab {
    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn n_range(&self) -> &BTreeSet<usize> {
        &self.n_range
    }

    pub fn size_cap(&self) -> usize {
        self.size_cap
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.term_index.get(term).copied()
    }

    /// Column counts of every in-vocabulary n-gram of `text`.
    fn counts(&self, text: &str) -> HashMap<usize, u64> {
        let tokens = tokenize(text);
        let mut counts = HashMap::new();
        for_each_ngram(&tokens, &self.n_range, |g| {
            if let Some(&col) = self.term_index.get(&g) {
                *counts.entry(col).or_insert(0) += 1;
            }
        });
        counts
    }
}

/// The `size_cap` most frequent n-grams of the training texts.
///
/// Frequency is the total number of occurrences; ties go to the
/// lexicographically smaller term.
pub fn build_vocab<S: AsRef<str>>(
    train_texts: &[S],
    n_range: &[usize],
    size_cap: usize,
) -> Result<Vocab, FeatureError> {
    if n_range.is_empty() || n_range.contains(&0) {
        return Err(FeatureError::InvalidVocab("n-gram orders must be non-empty and >= 1".into()));
    }
    if size_cap == 0 {
        return Err(FeatureError::InvalidVocab("size cap must be >= 1".into()));
    }
    let n_range: BTreeSet<usize> = n_range.iter().copied().collect();
    let mut freq: HashMap<String, u64> = HashMap::new();
    for text in train_texts {
        let tokens = tokenize(text.as_ref());
        for_each_ngram(&tokens, &n_range, |g| *freq.entry(g).or_insert(0) += 1);
    }
    if freq.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(size_cap);
    let terms: Vec<String> = ranked.into_iter().map(|(t, _)| t).collect();
    Ok(VocabRepr { terms, n_range, size_cap }.into())
}

/// Training-split document frequencies for each vocabulary term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocFreqs {
    pub n_docs: u64,
    pub df: Vec<u64>,
}

impl DocFreqs {
    pub fn fit<S: AsRef<str>>(train_texts: &[S], vocab: &Vocab) -> DocFreqs {
        let mut df = vec![0u64; vocab.len()];
        for text in train_texts {
            let present: HashSet<usize> = vocab.counts(text.as_ref()).into_keys().collect();
            for col in present {
                df[col] += 1;
            }
        }
        DocFreqs { n_docs: train_texts.len() as u64, df }
    }

    /// Smoothed inverse document frequency `ln((1 + D) / (1 + df)) + 1`.
    pub fn idf(&self, col: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.df[col] as f64)).ln() + 1.0
    }
}

/// `raw count * idf` for every vocabulary term; unknown n-grams are ignored.
pub fn tfidf<S: AsRef<str>>(
    ids: Vec<String>,
    texts: &[S],
    vocab: &Vocab,
    doc_freqs: &DocFreqs,
) -> Result<FeatureMatrix, FeatureError> {
    if ids.len() != texts.len() {
        return Err(FeatureError::LengthMismatch { rows: ids.len(), texts: texts.len() });
    }
    if doc_freqs.df.len() != vocab.len() {
        return Err(FeatureError::DimMismatch { expected: vocab.len(), got: doc_freqs.df.len() });
    }
    let n_cols = vocab.len();
    let idf: Vec<f64> = (0..n_cols).map(|c| doc_freqs.idf(c)).collect();
    let mut data = vec![0.0; texts.len() * n_cols];
    for (row, text) in texts.iter().enumerate() {
        for (col, count) in vocab.counts(text.as_ref()) {
            data[row * n_cols + col] = count as f64 * idf[col];
        }
    }
    FeatureMatrix::new(ids, data, n_cols)
}
