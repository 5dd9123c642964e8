//! Append-only JSONL response cache.
//!
//! Each line: `{"key": hex, "prompt": str, "params": {...}, "response": str, "ts": iso8601}`.
//! The key is the SHA-256 of the prompt together with model name,
//! temperature, top-p, sample index and seed.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, Completion, CompletionRequest, SamplingParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub prompt: String,
    pub params: CacheParams,
    pub response: String,
    pub ts: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheParams {
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub sample_index: u32,
    pub seed: u64,
}

impl CacheParams {
    fn new(params: &SamplingParams, request: &CompletionRequest<'_>) -> Self {
        CacheParams {
            model_name: params.model_name.clone(),
            temperature: params.temperature,
            top_p: params.top_p,
            sample_index: request.sample_index,
            seed: request.seed,
        }
    }
}

pub fn cache_key(prompt: &str, params: &CacheParams) -> String {
    let material = serde_json::json!([
        prompt,
        params.model_name,
        params.temperature,
        params.top_p,
        params.sample_index,
        params.seed
    ]);
    hex::encode(Sha256::digest(material.to_string().as_bytes()))
}

#[derive(Debug)]
pub struct ReplayCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, String>>,
    writer: Option<Mutex<File>>,
}

impl ReplayCache {
    /// Opens (creating if needed) a cache that records new responses.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let entries = if path.exists() { load(&path)? } else { HashMap::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?;
        Ok(ReplayCache {
            path,
            entries: RwLock::new(entries),
            writer: Some(Mutex::new(file)),
        })
    }

    /// Opens an existing cache for lookups only.
    pub fn open_read_only(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let entries = load(&path)?;
        Ok(ReplayCache {
            path,
            entries: RwLock::new(entries),
            writer: None,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    /// Appends one record as a single write. The first recorded response for
    /// a key wins.
    pub fn insert(&self, prompt: &str, params: CacheParams, response: &str) -> Result<(), BackendError> {
        let key = cache_key(prompt, &params);
        {
            let mut entries = self.entries.write().expect("cache lock");
            if entries.contains_key(&key) {
                return Ok(());
            }
            entries.insert(key.clone(), response.to_string());
        }
        let Some(writer) = &self.writer else {
            return Ok(());
        };
        let record = CacheRecord {
            key,
            prompt: prompt.to_string(),
            params,
            response: response.to_string(),
            ts: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        };
        let mut line = serde_json::to_vec(&record).map_err(|e| BackendError::Cache(e.to_string()))?;
        line.push(b'\n');
        let mut file = writer.lock().expect("cache writer lock");
        file.write_all(&line)
            .and_then(|_| file.flush())
            .map_err(|e| BackendError::Cache(format!("{}: {e}", self.path.display())))
    }
}

fn load(path: &Path) -> Result<HashMap<String, String>, BackendError> {
    let file = File::open(path).map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?;
    let mut entries = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| BackendError::Cache(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CacheRecord>(&line) {
            Ok(rec) => {
                entries.entry(rec.key).or_insert(rec.response);
            }
            Err(e) => tracing::warn!(path = %path.display(), line = idx + 1, "skipping unreadable cache line: {e}"),
        }
    }
    Ok(entries)
}

/// Serves responses from a cache, falling through to `inner` on a miss.
/// With no inner engine a miss is an error (pure replay).
pub struct CachedCompletion {
    pub(crate) inner: Option<Arc<dyn Completion>>,
    pub(crate) cache: Arc<ReplayCache>,
}

impl CachedCompletion {
    pub fn new(inner: Arc<dyn Completion>, cache: Arc<ReplayCache>) -> Self {
        CachedCompletion {
            inner: Some(inner),
            cache,
        }
    }

    pub fn replay_only(cache: Arc<ReplayCache>) -> Self {
        CachedCompletion { inner: None, cache }
    }
}

impl Completion for CachedCompletion {
    fn complete(&self, params: &SamplingParams, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let cache_params = CacheParams::new(params, request);
        let key = cache_key(request.prompt, &cache_params);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let Some(inner) = &self.inner else {
            return Err(BackendError::ReplayMiss { key });
        };
        let response = inner.complete(params, request)?;
        self.cache.insert(request.prompt, cache_params, &response)?;
        Ok(response)
    }
}
