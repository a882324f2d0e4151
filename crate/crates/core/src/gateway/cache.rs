//! Response cache keyed by (prompt digest, config digest, call seed).
//!
//! On disk the cache is a directory with `responses/<key>.json` and
//! `prompts/<digest>.txt`. Files are written to a temporary name and
//! renamed, so concurrent writers never expose partial entries.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, CompletionResult, GatewayError, GenerationConfig};
use crate::hashing::hex_digest;
use crate::prompt::PromptText;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    prompt_digest: String,
    config_digest: String,
    call_seed: u64,
    backend_name: String,
    raw_text: String,
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    responses: Mutex<HashMap<String, Entry>>,
    prompts: Mutex<HashMap<String, String>>,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn write_atomic(path: &Path, body: &[u8]) -> Result<(), GatewayError> {
    let tmp = path.with_extension(format!(
        "tmp.{}.{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, body).map_err(|e| GatewayError::Cache(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        for sub in ["responses", "prompts"] {
            fs::create_dir_all(dir.join(sub)).map_err(|e| GatewayError::Cache(format!("{}: {e}", dir.display())))?;
        }
        Ok(Self {
            dir: Some(dir),
            ..Default::default()
        })
    }

    pub fn key(prompt_digest: &str, config_digest: &str, call_seed: u64) -> String {
        hex_digest(format!("{prompt_digest}:{config_digest}:{call_seed}").as_bytes())
    }

    fn get(&self, key: &str) -> Option<Entry> {
        if let Some(e) = self.responses.lock().unwrap().get(key) {
            return Some(e.clone());
        }
        let dir = self.dir.as_ref()?;
        let body = fs::read_to_string(dir.join("responses").join(format!("{key}.json"))).ok()?;
        let entry: Entry = serde_json::from_str(&body).ok()?;
        self.responses.lock().unwrap().insert(key.to_string(), entry.clone());
        Some(entry)
    }

    fn put(&self, key: &str, entry: Entry, prompt: &PromptText) -> Result<(), GatewayError> {
        if let Some(dir) = &self.dir {
            let body = serde_json::to_vec(&entry).expect("entry serializes");
            write_atomic(&dir.join("responses").join(format!("{key}.json")), &body)?;
            let prompt_path = dir.join("prompts").join(format!("{}.txt", prompt.digest));
            if !prompt_path.exists() {
                write_atomic(&prompt_path, prompt.rendered.as_bytes())?;
            }
        }
        self.prompts
            .lock()
            .unwrap()
            .insert(prompt.digest.clone(), prompt.rendered.clone());
        self.responses.lock().unwrap().insert(key.to_string(), entry);
        Ok(())
    }

    /// Rendered prompt text for a digest, if any cached response used it.
    pub fn prompt(&self, digest: &str) -> Option<String> {
        if let Some(p) = self.prompts.lock().unwrap().get(digest) {
            return Some(p.clone());
        }
        let dir = self.dir.as_ref()?;
        fs::read_to_string(dir.join("prompts").join(format!("{digest}.txt"))).ok()
    }

    pub fn len(&self) -> usize {
        match &self.dir {
            Some(dir) => fs::read_dir(dir.join("responses"))
                .map(|rd| {
                    rd.filter_map(Result::ok)
                        .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                        .count()
                })
                .unwrap_or(0),
            None => self.responses.lock().unwrap().len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Serves completions from a [`ResponseCache`], calling the wrapped backend
/// only on a miss.
pub struct CachedBackend<B> {
    inner: B,
    cache: std::sync::Arc<ResponseCache>,
    backend_calls: AtomicU64,
    hits: AtomicU64,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache: std::sync::Arc<ResponseCache>) -> Self {
        Self {
            inner,
            cache,
            backend_calls: AtomicU64::new(0),
            hits: AtomicU64::new(0),
        }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Number of calls forwarded to the wrapped backend.
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn complete(&self, prompt: &PromptText, config: &GenerationConfig, call_seed: u64) -> Result<CompletionResult, GatewayError> {
        let config_digest = config.digest();
        let key = ResponseCache::key(&prompt.digest, &config_digest, call_seed);
        if let Some(e) = self.cache.get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            self.cache
                .prompts
                .lock()
                .unwrap()
                .entry(prompt.digest.clone())
                .or_insert_with(|| prompt.rendered.clone());
            return Ok(CompletionResult {
                raw_text: e.raw_text,
                backend_name: e.backend_name,
                latency_ms: 0,
                attempt_count: 1,
            });
        }
        self.backend_calls.fetch_add(1, Ordering::SeqCst);
        let result = self.inner.complete(prompt, config, call_seed)?;
        self.cache.put(
            &key,
            Entry {
                prompt_digest: prompt.digest.clone(),
                config_digest,
                call_seed,
                backend_name: result.backend_name.clone(),
                raw_text: result.raw_text.clone(),
            },
            prompt,
        )?;
        Ok(result)
    }
}
