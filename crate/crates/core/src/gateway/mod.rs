//! Uniform client over chat-completion and embedding endpoints with
//! deterministic on-disk caching, bounded retries, a bounded-parallelism
//! limiter, and a fully offline scripted mock backend.

mod cache;
mod http;
mod mock;

pub use cache::{CacheEntry, DiskCache};
pub use http::HttpBackend;
pub use mock::{derived_embedding, MockBackend, MockChatRule, MockReply, MockScript};

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("authentication rejected by endpoint")]
    Auth,
    #[error("rate limited (retry after {retry_after_ms:?} ms)")]
    RateLimited { retry_after_ms: Option<u64> },
    #[error("mock backend has no scripted reply for: {0}")]
    MockMiss(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cosine undefined for zero-norm vector")]
    ZeroNorm,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("malformed backend response: {0}")]
    BadResponse(String),
    #[error("cache I/O: {0}")]
    Cache(String),
}

impl GatewayError {
    fn is_retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::Transport { retryable: true, .. } | GatewayError::RateLimited { .. }
        )
    }
}

/// Decoding parameters for one chat completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub nucleus_p: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DecodingParams {
    pub fn new(temperature: f64, nucleus_p: f64, max_tokens: u32) -> Result<Self, GatewayError> {
        if temperature < 0.0 {
            return Err(GatewayError::EmptyInput(format!(
                "temperature must be >= 0, got {temperature}"
            )));
        }
        if !(nucleus_p > 0.0 && nucleus_p <= 1.0) {
            return Err(GatewayError::EmptyInput(format!(
                "nucleus_p must be in (0, 1], got {nucleus_p}"
            )));
        }
        if max_tokens == 0 {
            return Err(GatewayError::EmptyInput("max_tokens must be > 0".into()));
        }
        Ok(Self {
            temperature,
            nucleus_p,
            max_tokens,
            seed: None,
        })
    }

    /// Rubric-generation defaults: temperature 0.7, nucleus 0.9, 512 tokens.
    pub fn sampling() -> Self {
        Self::new(0.7, 0.9, 512).expect("valid defaults")
    }

    /// Scoring defaults: greedy decoding, 256 tokens.
    pub fn greedy() -> Self {
        Self::new(0.0, 1.0, 256).expect("valid defaults")
    }
}

/// One chat-completion request: system–user message structure plus
/// decoding parameters and an optional structured-output schema tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_text: Option<String>,
    pub user_text: String,
    pub params: DecodingParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_schema: Option<String>,
    /// Extra cache-scope token for sampled requests; distinct runs use
    /// distinct scopes so temperature > 0 calls can resample while the
    /// same run replays its transcript byte-identically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_scope: Option<String>,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, user_text: impl Into<String>, params: DecodingParams) -> Self {
        Self {
            model_id: model_id.into(),
            system_text: None,
            user_text: user_text.into(),
            params,
            response_schema: None,
            cache_scope: None,
        }
    }

    pub fn cache_key(&self) -> CacheKey {
        // Temperature-0 requests are cached permanently regardless of
        // run scope; sampled requests carry the run-scoped token.
        let scope = if self.params.temperature > 0.0 {
            self.cache_scope.as_deref()
        } else {
            None
        };
        let payload = serde_json::json!({
            "kind": "chat",
            "model_id": self.model_id,
            "system_text": self.system_text,
            "user_text": self.user_text,
            "params": self.params,
            "response_schema": self.response_schema,
            "scope": scope,
        });
        CacheKey::of(&payload)
    }
}

/// Content digest identifying one request; equal requests get equal keys.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey(pub String);

impl CacheKey {
    fn of(payload: &serde_json::Value) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(payload).expect("serializable"));
        CacheKey(hex::encode(hasher.finalize()))
    }

    pub fn for_embedding(model_id: &str, text: &str) -> Self {
        Self::of(&serde_json::json!({
            "kind": "embedding",
            "model_id": model_id,
            "text": text,
        }))
    }
}

/// Fixed-length embedding of one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

/// Cosine similarity; symmetric, in [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, GatewayError> {
    if a.values.len() != b.values.len() {
        return Err(GatewayError::DimensionMismatch {
            expected: a.values.len(),
            got: b.values.len(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(GatewayError::ZeroNorm);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Raw transport to a model endpoint; the [`Gateway`] layers caching,
/// retries, and throttling on top.
pub trait ChatBackend: Send + Sync {
    fn raw_complete(&self, req: &ChatRequest) -> Result<String, GatewayError>;
    fn raw_embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;
}

/// Counting semaphore bounding in-flight backend requests.
struct Limiter {
    available: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(capacity: usize) -> Self {
        Self {
            available: Mutex::new(capacity.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut available = self.available.lock().expect("limiter poisoned");
        while *available == 0 {
            available = self.cv.wait(available).expect("limiter poisoned");
        }
        *available -= 1;
        LimiterGuard { limiter: self }
    }
}

struct LimiterGuard<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        let mut available = self.limiter.available.lock().expect("limiter poisoned");
        *available += 1;
        self.limiter.cv.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 250,
        }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts; used by tests.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay_ms: 0,
        }
    }
}

/// Instrumentation counters, snapshotted by tests and run summaries.
#[derive(Debug, Default)]
struct Counters {
    backend_calls: AtomicU64,
    backend_embed_items: AtomicU64,
    cache_hits: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatewayStats {
    pub backend_calls: u64,
    pub backend_embed_items: u64,
    pub cache_hits: u64,
}

/// Caching, retrying, throttled front door to a chat/embedding backend.
/// Safe to share across threads.
pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    cache: Option<DiskCache>,
    mirror: Mutex<Option<DiskCache>>,
    limiter: Limiter,
    retry: RetryPolicy,
    counters: Counters,
}

impl Gateway {
    pub fn new(backend: Box<dyn ChatBackend>) -> Self {
        Self {
            backend,
            cache: None,
            mirror: Mutex::new(None),
            limiter: Limiter::new(4),
            retry: RetryPolicy::default(),
            counters: Counters::default(),
        }
    }

    pub fn with_cache_dir(mut self, dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        self.cache = Some(DiskCache::open(dir)?);
        Ok(self)
    }

    pub fn with_limiter(mut self, max_in_flight: usize) -> Self {
        self.limiter = Limiter::new(max_in_flight);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Also persist every entry (hits included) under `dir`, so a run
    /// directory carries its full transcript.
    pub fn set_mirror(&self, dir: Option<&Path>) -> Result<(), GatewayError> {
        let mut mirror = self.mirror.lock().expect("mirror poisoned");
        *mirror = match dir {
            Some(d) => Some(DiskCache::open(d)?),
            None => None,
        };
        Ok(())
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            backend_calls: self.counters.backend_calls.load(Ordering::SeqCst),
            backend_embed_items: self.counters.backend_embed_items.load(Ordering::SeqCst),
            cache_hits: self.counters.cache_hits.load(Ordering::SeqCst),
        }
    }

    fn mirror_entry(&self, entry: &CacheEntry) -> Result<(), GatewayError> {
        let mirror = self.mirror.lock().expect("mirror poisoned");
        if let Some(m) = mirror.as_ref() {
            m.put(entry)?;
        }
        Ok(())
    }

    fn call_with_retry<T>(
        &self,
        mut call: impl FnMut() -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let _slot = self.limiter.acquire();
            match call() {
                Ok(value) => return Ok(value),
                Err(err) if err.is_retryable() && attempt < self.retry.max_attempts => {
                    let backoff = self.retry.base_delay_ms.saturating_mul(1 << (attempt - 1));
                    let delay = match &err {
                        GatewayError::RateLimited {
                            retry_after_ms: Some(ms),
                        } => (*ms).max(backoff),
                        _ => backoff,
                    };
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
                Err(err) => return Err(err),
            }
        }
    }

    /// Complete a chat request. Cache hits return the stored text
    /// byte-identically with zero backend traffic.
    pub fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        if req.user_text.trim().is_empty() {
            return Err(GatewayError::EmptyInput("user_text is empty".into()));
        }
        let key = req.cache_key();
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&key)? {
                self.counters.cache_hits.fetch_add(1, Ordering::SeqCst);
                self.mirror_entry(&entry)?;
                let text = entry
                    .response
                    .as_str()
                    .ok_or_else(|| GatewayError::Cache("chat entry is not text".into()))?
                    .to_string();
                return Ok(text);
            }
        }
        let text = self.call_with_retry(|| self.backend.raw_complete(req))?;
        self.counters.backend_calls.fetch_add(1, Ordering::SeqCst);
        let entry = CacheEntry {
            key: key.clone(),
            kind: "chat".into(),
            request: serde_json::to_value(req).expect("serializable"),
            response: serde_json::Value::String(text.clone()),
        };
        if let Some(cache) = &self.cache {
            cache.put(&entry)?;
        }
        self.mirror_entry(&entry)?;
        Ok(text)
    }

    /// Embed a batch of texts, order-preserving, cached per
    /// (model_id, text). Only cache misses reach the backend.
    pub fn embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyInput("embedding batch is empty".into()));
        }
        if let Some(pos) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::EmptyInput(format!(
                "embedding text at position {pos} is empty"
            )));
        }
        let mut resolved: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        let mut missing: Vec<String> = Vec::new();
        let mut missing_positions: Vec<Vec<usize>> = Vec::new();
        for (i, text) in texts.iter().enumerate() {
            let key = CacheKey::for_embedding(model_id, text);
            if let Some(cache) = &self.cache {
                if let Some(entry) = cache.get(&key)? {
                    self.counters.cache_hits.fetch_add(1, Ordering::SeqCst);
                    self.mirror_entry(&entry)?;
                    let values: Vec<f64> = serde_json::from_value(entry.response.clone())
                        .map_err(|e| GatewayError::Cache(e.to_string()))?;
                    resolved[i] = Some(values);
                    continue;
                }
            }
            match missing.iter().position(|t| t == text) {
                Some(j) => missing_positions[j].push(i),
                None => {
                    missing.push(text.clone());
                    missing_positions.push(vec![i]);
                }
            }
        }
        if !missing.is_empty() {
            let vectors = self.call_with_retry(|| self.backend.raw_embed(model_id, &missing))?;
            if vectors.len() != missing.len() {
                return Err(GatewayError::BadResponse(format!(
                    "asked for {} embeddings, got {}",
                    missing.len(),
                    vectors.len()
                )));
            }
            self.counters
                .backend_embed_items
                .fetch_add(missing.len() as u64, Ordering::SeqCst);
            let dim = vectors[0].len();
            for v in &vectors {
                if v.len() != dim {
                    return Err(GatewayError::DimensionMismatch {
                        expected: dim,
                        got: v.len(),
                    });
                }
            }
            for (text, (positions, values)) in missing
                .iter()
                .zip(missing_positions.iter().zip(vectors))
            {
                let entry = CacheEntry {
                    key: CacheKey::for_embedding(model_id, text),
                    kind: "embedding".into(),
                    request: serde_json::json!({"model_id": model_id, "text": text}),
                    response: serde_json::to_value(&values).expect("serializable"),
                };
                if let Some(cache) = &self.cache {
                    cache.put(&entry)?;
                }
                self.mirror_entry(&entry)?;
                for &pos in positions {
                    resolved[pos] = Some(values.clone());
                }
            }
        }
        let mut out = Vec::with_capacity(texts.len());
        let mut dim: Option<usize> = None;
        for values in resolved.into_iter() {
            let values = values.expect("all positions resolved");
            if let Some(d) = dim {
                if values.len() != d {
                    return Err(GatewayError::DimensionMismatch {
                        expected: d,
                        got: values.len(),
                    });
                }
            } else {
                dim = Some(values.len());
            }
            out.push(EmbeddingVector {
                values,
                model_id: model_id.to_string(),
            });
        }
        Ok(out)
    }
}
