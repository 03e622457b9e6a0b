use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{FeatureError, FeatureMatrix};
use crate::binio::{self, Cursor};

const EMB_MAGIC: &str = "EMB1";

/// Precomputed per-id vectors, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    records: Vec<(String, Vec<f32>)>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, records: Vec<(String, Vec<f32>)>) -> Result<Self, FeatureError> {
        if dim == 0 {
            return Err(FeatureError::DimZero);
        }
        let mut index = HashMap::with_capacity(records.len());
        for (i, (id, v)) in records.iter().enumerate() {
            if v.len() != dim {
                return Err(FeatureError::DimMismatch { expected: dim, got: v.len() });
            }
            if let Some(col) = v.iter().position(|x| !x.is_finite()) {
                return Err(FeatureError::NonFinite { row: i, col });
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(FeatureError::InvalidContent(format!("duplicate id {id:?}")));
            }
        }
        Ok(EmbeddingTable { dim, records, index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|(id, _)| id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.records[i].1.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(EMB_MAGIC.as_bytes());
        binio::write_u32(&mut buf, self.records.len()).expect("count fits u32");
        binio::write_u32(&mut buf, self.dim).expect("dim fits u32");
        for (id, v) in &self.records {
            binio::write_short_str(&mut buf, id).expect("id fits u16 length");
            for x in v {
                buf.write_all(&x.to_le_bytes()).unwrap();
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FeatureError> {
        let mut cur = Cursor::new(bytes);
        cur.expect_magic(EMB_MAGIC)?;
        let count = cur.u32("record count")? as usize;
        let dim = cur.u32("dimension")? as usize;
        if dim == 0 {
            return Err(FeatureError::DimZero);
        }
        let mut records = Vec::with_capacity(count.min(bytes.len()));
        for _ in 0..count {
            let id = cur.short_str("id")?;
            let v = (0..dim).map(|_| cur.f32("vector")).collect::<Result<Vec<_>, _>>()?;
            records.push((id, v));
        }
        cur.finish()?;
        EmbeddingTable::new(dim, records)
    }
}

/// Reads an EMB1 file: magic, u32 count, u32 dim, then per record a u16 id
/// length, the UTF-8 id and `dim` little-endian f32 values.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, FeatureError> {
    let bytes = std::fs::read(path)
        .map_err(|source| FeatureError::Io { path: path.display().to_string(), source })?;
    EmbeddingTable::from_bytes(&bytes)
}

pub fn save_embeddings(path: &Path, table: &EmbeddingTable) -> Result<(), FeatureError> {
    binio::write_atomic(path, &table.to_bytes())
        .map_err(|source| FeatureError::Io { path: path.display().to_string(), source })
}

/// Rows for `ids`, in the requested order.
pub fn lookup(table: &EmbeddingTable, ids: &[String]) -> Result<FeatureMatrix, FeatureError> {
    let mut data = Vec::with_capacity(ids.len() * table.dim);
    for id in ids {
        let v = table.get(id).ok_or_else(|| FeatureError::MissingId(id.clone()))?;
        data.extend(v.iter().map(|&x| f64::from(x)));
    }
    FeatureMatrix::new(ids.to_vec(), data, table.dim)
}

/// Deterministic stand-in for transformer embeddings: each text seeds its own
/// generator from `sha256(seed, text)` and draws `dim` values in `[-1, 1]`.
pub fn mock_embed<S: AsRef<str>>(ids: Vec<String>, texts: &[S], dim: usize, seed: u64) -> Result<FeatureMatrix, FeatureError> {
    if dim == 0 {
        return Err(FeatureError::DimZero);
    }
    if ids.len() != texts.len() {
        return Err(FeatureError::LengthMismatch { rows: ids.len(), texts: texts.len() });
    }
    let mut data = Vec::with_capacity(texts.len() * dim);
    for text in texts {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(text.as_ref().as_bytes());
        let mut key = [0u8; 32];
        key.copy_from_slice(&hasher.finalize());
        let mut rng = ChaCha8Rng::from_seed(key);
        data.extend((0..dim).map(|_| rng.gen_range(-1.0..=1.0)));
    }
    FeatureMatrix::new(ids, data, dim)
}
