use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LlmError;
use crate::corpus::TaskSpec;

/// One cached chat exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatRecord {
    pub example_id: String,
    pub task: TaskSpec,
    pub prompt: String,
    pub response: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// RFC 3339, UTC.
    pub created_at: String,
    /// Hex SHA-256 of `(model, temperature, n_choices)`.
    pub params_digest: String,
}

impl ChatRecord {
    pub fn cache_key(&self) -> String {
        key_from_params_digest(&self.params_digest, &self.prompt)
    }
}

fn update_prefixed(hasher: &mut Sha256, bytes: &[u8]) {
    hasher.update((bytes.len() as u64).to_le_bytes());
    hasher.update(bytes);
}

pub(crate) fn params_digest(model: &str, temperature: f64, n_choices: u32) -> String {
    let mut hasher = Sha256::new();
    update_prefixed(&mut hasher, b"chat-params/v1");
    update_prefixed(&mut hasher, model.as_bytes());
    hasher.update(temperature.to_bits().to_le_bytes());
    hasher.update(n_choices.to_le_bytes());
    hex::encode(hasher.finalize())
}

fn key_from_params_digest(params_digest: &str, prompt: &str) -> String {
    let mut hasher = Sha256::new();
    update_prefixed(&mut hasher, b"chat-key/v1");
    update_prefixed(&mut hasher, params_digest.as_bytes());
    update_prefixed(&mut hasher, prompt.as_bytes());
    hex::encode(hasher.finalize())
}

/// Cache key over `(model, temperature, n_choices, prompt)`.
pub fn cache_key(model: &str, temperature: f64, n_choices: u32, prompt: &str) -> String {
    key_from_params_digest(&params_digest(model, temperature, n_choices), prompt)
}

struct Inner {
    index: HashMap<String, ChatRecord>,
    writer: Option<File>,
}

/// Append-only JSONL cache with an in-memory index.
///
/// The first record stored for a key wins. A torn final line (from a crash
/// mid-write) is ignored on load; a malformed line elsewhere is an error.
pub struct CacheStore {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl CacheStore {
    pub fn in_memory() -> Self {
        CacheStore {
            path: None,
            inner: Mutex::new(Inner { index: HashMap::new(), writer: None }),
        }
    }

    pub fn open(path: &Path) -> Result<Self, LlmError> {
        let io = |source| LlmError::CacheIo { path: path.display().to_string(), source };
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let mut index = HashMap::new();
        let mut torn_tail = false;
        if path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(path).map_err(io)?)
                .lines()
                .collect::<Result<_, _>>()
                .map_err(io)?;
            let last = lines.len().saturating_sub(1);
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<ChatRecord>(line) {
                    Ok(rec) => {
                        index.entry(rec.cache_key()).or_insert(rec);
                    }
                    Err(_) if i == last => {
                        log::warn!("{}: ignoring torn final line", path.display());
                        torn_tail = true;
                    }
                    Err(e) => {
                        return Err(LlmError::CacheCorrupt {
                            path: path.display().to_string(),
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
        }
        if torn_tail {
            rewrite(path, index.values()).map_err(io)?;
        }
        let writer = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(CacheStore {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner { index, writer: Some(writer) }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<ChatRecord> {
        self.inner.lock().unwrap().index.get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores `record` unless its key is already present. Returns whether it was new.
    pub fn insert(&self, record: ChatRecord) -> Result<bool, LlmError> {
        let key = record.cache_key();
        let mut inner = self.inner.lock().unwrap();
        if inner.index.contains_key(&key) {
            return Ok(false);
        }
        if let Some(writer) = inner.writer.as_mut() {
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            writer
                .write_all(line.as_bytes())
                .and_then(|_| writer.flush())
                .map_err(|source| LlmError::CacheIo {
                    path: self.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                    source,
                })?;
        }
        inner.index.insert(key, record);
        Ok(true)
    }

    /// Rewrites the backing file with one line per key, returning how many
    /// duplicate lines were dropped.
    pub fn compact(path: &Path) -> Result<usize, LlmError> {
        let io = |source| LlmError::CacheIo { path: path.display().to_string(), source };
        let total_lines = if path.exists() {
            BufReader::new(File::open(path).map_err(io)?)
                .lines()
                .filter(|l| l.as_ref().map(|l| !l.trim().is_empty()).unwrap_or(true))
                .count()
        } else {
            0
        };
        let store = CacheStore::open(path)?;
        let inner = store.inner.lock().unwrap();
        let mut records: Vec<&ChatRecord> = inner.index.values().collect();
        records.sort_by(|a, b| (&a.created_at, &a.example_id, &a.prompt).cmp(&(&b.created_at, &b.example_id, &b.prompt)));
        rewrite(path, records.into_iter()).map_err(io)?;
        Ok(total_lines.saturating_sub(inner.index.len()))
    }
}

fn rewrite<'a>(path: &Path, records: impl Iterator<Item = &'a ChatRecord>) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut buf, rec)?;
        buf.push(b'\n');
    }
    crate::binio::write_atomic(path, &buf)
}
