//! Uniform chat-completion access with caching, retries and per-backend
//! concurrency limits.

mod backend;
mod cache;
mod config;
mod http;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::prompt::PromptText;

pub use backend::{BackendError, ChatBackend, StubBackend, StubFallback, StubMatch};
pub use cache::{CacheEntry, ResponseCache, CACHE_FILE};
pub(crate) use config::sha256_hex;
pub use config::{default_config, request_fingerprint, GenConfig, Stage, DEFAULT_BACKEND};
pub use http::{OpenAiBackend, API_KEY_ENV, BASE_URL_ENV, DEFAULT_BASE_URL};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("backend `{backend_id}` unavailable: {message}")]
    BackendUnavailable { backend_id: String, message: String },
    #[error("backend `{backend_id}` refused the request (status {status}): {message}")]
    BackendRefusedRequest { backend_id: String, status: u16, message: String },
    #[error("corrupt cache file {path}, line {line}: {message}")]
    CacheCorruption { path: PathBuf, line: usize, message: String },
    #[error("backend id `{0}` already registered")]
    DuplicateBackendId(String),
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("cache io: {0}")]
    Io(String),
}

impl GatewayError {
    /// Short machine-readable tag recorded in run artifacts.
    pub fn tag(&self) -> &'static str {
        match self {
            GatewayError::BackendUnavailable { .. } => "backend_unavailable",
            GatewayError::BackendRefusedRequest { .. } => "backend_refused_request",
            GatewayError::CacheCorruption { .. } => "cache_corruption",
            GatewayError::DuplicateBackendId(_) => "duplicate_backend_id",
            GatewayError::InvalidConfig(_) => "invalid_config",
            GatewayError::Io(_) => "io",
        }
    }
}

/// Bounded exponential backoff for transient failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 4, base_delay: Duration::from_millis(500), max_delay: Duration::from_secs(8) }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts; for tests.
    pub fn immediate(max_attempts: u32) -> Self {
        Self { max_attempts, base_delay: Duration::ZERO, max_delay: Duration::ZERO }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Counting semaphore bounding in-flight requests.
struct Limiter {
    in_flight: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Self { in_flight: Mutex::new(0), freed: Condvar::new(), max: max.max(1) }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter lock");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("limiter lock") -= 1;
        self.0.freed.notify_one();
    }
}

struct Registered {
    backend: Arc<dyn ChatBackend>,
    limiter: Arc<Limiter>,
}

/// Result of one completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub backend_id: String,
    pub cached: bool,
    pub latency_ms: f64,
    pub request_fingerprint: String,
}

/// Routes completion requests to registered backends through the cache.
pub struct Gateway {
    backends: RwLock<HashMap<String, Registered>>,
    cache: ResponseCache,
    retry: RetryPolicy,
    max_in_flight: usize,
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new(ResponseCache::in_memory())
    }
}

impl Gateway {
    pub fn new(cache: ResponseCache) -> Self {
        Self { backends: RwLock::new(HashMap::new()), cache, retry: RetryPolicy::default(), max_in_flight: 4 }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Per-backend in-flight limit for backends registered afterwards.
    pub fn with_max_in_flight(mut self, max: usize) -> Self {
        self.max_in_flight = max.max(1);
        self
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn register(&self, backend: Arc<dyn ChatBackend>) -> Result<(), GatewayError> {
        let id = backend.backend_id().to_owned();
        let mut map = self.backends.write().expect("registry lock");
        if map.contains_key(&id) {
            return Err(GatewayError::DuplicateBackendId(id));
        }
        let limiter = Arc::new(Limiter::new(self.max_in_flight));
        map.insert(id, Registered { backend, limiter });
        Ok(())
    }

    /// Registers a stub backend answering from `rules`, falling back as
    /// configured.
    pub fn register_stub(
        &self,
        backend_id: &str,
        rules: impl IntoIterator<Item = (StubMatch, String)>,
        fallback: StubFallback,
    ) -> Result<Arc<StubBackend>, GatewayError> {
        let stub = Arc::new(StubBackend::new(backend_id).with_rules(rules).with_fallback(fallback));
        self.register(stub.clone())?;
        Ok(stub)
    }

    pub fn has_backend(&self, backend_id: &str) -> bool {
        self.backends.read().expect("registry lock").contains_key(backend_id)
    }

    pub fn complete(&self, prompt: &PromptText, cfg: &GenConfig) -> Result<CompletionResult, GatewayError> {
        self.complete_text(&prompt.text, cfg)
    }

    /// Cache first; on a miss, call the backend with retries and store the
    /// answer.
    pub fn complete_text(&self, prompt: &str, cfg: &GenConfig) -> Result<CompletionResult, GatewayError> {
        cfg.validate()?;
        let started = Instant::now();
        let fingerprint = request_fingerprint(prompt, cfg);
        let finish = |text: String, cached: bool| CompletionResult {
            text,
            backend_id: cfg.backend_id.clone(),
            cached,
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
            request_fingerprint: fingerprint.clone(),
        };
        if let Some(text) = self.cache.get(&fingerprint) {
            return Ok(finish(text, true));
        }
        let (backend, limiter) = {
            let map = self.backends.read().expect("registry lock");
            let reg = map.get(&cfg.backend_id).ok_or_else(|| GatewayError::BackendUnavailable {
                backend_id: cfg.backend_id.clone(),
                message: "no backend registered under this id".into(),
            })?;
            (reg.backend.clone(), reg.limiter.clone())
        };
        let mut last_error = String::new();
        for attempt in 0..self.retry.max_attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            let outcome = {
                let _permit = limiter.acquire();
                backend.complete(prompt, cfg)
            };
            match outcome {
                Ok(text) => {
                    self.cache.insert(&fingerprint, prompt, cfg, &text)?;
                    return Ok(finish(text, false));
                }
                Err(BackendError::Refused { status, message }) => {
                    return Err(GatewayError::BackendRefusedRequest {
                        backend_id: cfg.backend_id.clone(),
                        status,
                        message,
                    });
                }
                Err(BackendError::Transient(message)) => last_error = message,
            }
        }
        Err(GatewayError::BackendUnavailable { backend_id: cfg.backend_id.clone(), message: last_error })
    }
}

#[cfg(test)]
mod tests;
