use std::sync::atomic::{AtomicUsize, Ordering};

use super::config::{request_fingerprint, GenConfig};

/// Failure reported by a chat backend.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Worth retrying: network trouble, rate limiting, server errors.
    #[error("transient backend failure: {0}")]
    Transient(String),
    /// The request itself was rejected; retrying cannot help.
    #[error("request rejected with status {status}: {message}")]
    Refused { status: u16, message: String },
}

/// A chat-completion provider. One prompt in, one completion text out.
pub trait ChatBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn complete(&self, prompt: &str, cfg: &GenConfig) -> Result<String, BackendError>;
}

/// How a stub rule selects requests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubMatch {
    /// Exact request fingerprint.
    Fingerprint(String),
    /// Substring of the prompt text.
    Contains(String),
}

/// What a stub does with a request no rule matches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubFallback {
    Respond(String),
    Reject,
}

type Responder = Box<dyn Fn(&str) -> Option<String> + Send + Sync>;

/// Deterministic offline backend. Rules are tried in order, then the
/// optional responder function, then the fallback.
pub struct StubBackend {
    id: String,
    rules: Vec<(StubMatch, String)>,
    responder: Option<Responder>,
    fallback: StubFallback,
    calls: AtomicUsize,
}

impl StubBackend {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            rules: Vec::new(),
            responder: None,
            fallback: StubFallback::Reject,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_rule(mut self, matcher: StubMatch, response: impl Into<String>) -> Self {
        self.rules.push((matcher, response.into()));
        self
    }

    pub fn with_rules(mut self, rules: impl IntoIterator<Item = (StubMatch, String)>) -> Self {
        self.rules.extend(rules);
        self
    }

    pub fn with_responder(mut self, f: impl Fn(&str) -> Option<String> + Send + Sync + 'static) -> Self {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn with_fallback(mut self, fallback: StubFallback) -> Self {
        self.fallback = fallback;
        self
    }

    /// Backend that answers every request with `text`.
    pub fn constant(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self::new(id).with_fallback(StubFallback::Respond(text.into()))
    }

    /// Number of requests that reached this backend.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for StubBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str, cfg: &GenConfig) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let fingerprint = request_fingerprint(prompt, cfg);
        for (matcher, response) in &self.rules {
            let hit = match matcher {
                StubMatch::Fingerprint(f) => *f == fingerprint,
                StubMatch::Contains(s) => prompt.contains(s.as_str()),
            };
            if hit {
                return Ok(response.clone());
            }
        }
        if let Some(answer) = self.responder.as_ref().and_then(|f| f(prompt)) {
            return Ok(answer);
        }
        match &self.fallback {
            StubFallback::Respond(text) => Ok(text.clone()),
            StubFallback::Reject => {
                Err(BackendError::Refused { status: 404, message: "no stub response for request".into() })
            }
        }
    }
}
