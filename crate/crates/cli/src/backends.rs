//! Builds gateways, embedders and image providers from the run config.

use std::fmt;
use std::sync::Arc;

use imageshare_core::augment::{corpus_provider, HttpImageProvider, ImageProvider};
use imageshare_core::data::{AnnotationMap, Dialogue, ImageRef};
use imageshare_core::echo::{gold_echo_rules, gold_embedder, inject_refusals, refusal_set};
use imageshare_core::llm::{
    Gateway, OpenAiBackend, ResponseCache, RetryPolicy, StubFallback, API_KEY_ENV, BASE_URL_ENV, DEFAULT_BASE_URL,
};
use imageshare_core::pipeline::RenderedPrompt;
use imageshare_core::retrieval::{EmbeddingBackend, HashEmbedder, HttpEmbedder};

use crate::config::{config_error, BackendKind, EmbeddingKind, ProviderKind, RunConfig};

/// A backend that cannot serve requests at all. Exit status 3.
#[derive(Debug)]
pub struct FatalBackend(pub String);

impl fmt::Display for FatalBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "backend error: {}", self.0)
    }
}

impl std::error::Error for FatalBackend {}

fn cached_gateway(cfg: &RunConfig) -> anyhow::Result<Gateway> {
    let cache = ResponseCache::open(cfg.cache_dir()).map_err(|e| config_error(format!("run.cache_dir: {e}")))?;
    let retry = RetryPolicy { max_attempts: cfg.backend.max_attempts, ..RetryPolicy::default() };
    Ok(Gateway::new(cache).with_retry(retry).with_max_in_flight(cfg.backend.max_in_flight.min(cfg.run.workers)))
}

/// Gateway with the configured chat backend registered. The gold-echo
/// backend answers exactly the prompts in `prompts`.
pub fn gateway(
    cfg: &RunConfig,
    prompts: &[RenderedPrompt],
    dialogues: &[Dialogue],
    annotations: Option<&AnnotationMap>,
) -> anyhow::Result<Gateway> {
    let gw = cached_gateway(cfg)?;
    let id = cfg.backend.backend_id();
    match cfg.backend.kind {
        BackendKind::Openai => {
            let model =
                cfg.backend.model.clone().ok_or_else(|| config_error("backend.model is required for openai"))?;
            let base = cfg
                .backend
                .base_url
                .clone()
                .or_else(|| std::env::var(BASE_URL_ENV).ok())
                .unwrap_or_else(|| DEFAULT_BASE_URL.to_owned());
            let key = cfg.backend.api_key.clone().or_else(|| std::env::var(API_KEY_ENV).ok());
            let backend = OpenAiBackend::new(id, model, base, key).map_err(|e| FatalBackend(e.to_string()))?;
            gw.register(Arc::new(backend)).map_err(|e| FatalBackend(e.to_string()))?;
        }
        BackendKind::GoldEcho => {
            let annotations =
                annotations.ok_or_else(|| config_error("the gold-echo backend needs data.annotations"))?;
            let mut rules = gold_echo_rules(prompts, dialogues, annotations);
            if cfg.backend.refusal_rate > 0.0 {
                let ids: Vec<String> = dialogues.iter().map(|d| d.dialogue_id.clone()).collect();
                let seed = cfg.backend.refusal_seed.unwrap_or(cfg.pipeline.seed);
                let refused = refusal_set(&ids, cfg.backend.refusal_rate, seed);
                rules = inject_refusals(rules, prompts, &refused);
            }
            gw.register_stub(&id, rules, StubFallback::Reject).map_err(|e| FatalBackend(e.to_string()))?;
        }
    }
    Ok(gw)
}

/// The configured embedder, or `None` when embedding is switched off.
pub fn embedder(
    cfg: &RunConfig,
    dialogues: &[Dialogue],
    annotations: Option<&AnnotationMap>,
) -> anyhow::Result<Option<Arc<dyn EmbeddingBackend>>> {
    let e = &cfg.embedding;
    let id = e.backend_id();
    Ok(match e.kind {
        EmbeddingKind::None => None,
        EmbeddingKind::Hash => Some(Arc::new(HashEmbedder::new(id, e.dim))),
        EmbeddingKind::Http => {
            let url = e.url.clone().ok_or_else(|| config_error("embedding.url is required"))?;
            Some(Arc::new(HttpEmbedder::connect(id, url).map_err(|e| FatalBackend(e.message))?))
        }
        EmbeddingKind::Gold => {
            let annotations = annotations.ok_or_else(|| config_error("the gold embedding needs data.annotations"))?;
            Some(Arc::new(gold_embedder(&id, e.dim, dialogues, annotations)))
        }
    })
}

pub fn require_embedder(
    cfg: &RunConfig,
    dialogues: &[Dialogue],
    annotations: Option<&AnnotationMap>,
    purpose: &str,
) -> anyhow::Result<Arc<dyn EmbeddingBackend>> {
    embedder(cfg, dialogues, annotations)?
        .ok_or_else(|| config_error(format!("{purpose} needs an embedding backend; set embedding.kind")))
}

pub fn image_provider(
    cfg: &RunConfig,
    candidates: &[ImageRef],
    dialogues: &[Dialogue],
    annotations: Option<&AnnotationMap>,
) -> anyhow::Result<Box<dyn ImageProvider>> {
    match cfg.augment.provider {
        ProviderKind::Corpus => {
            let backend = require_embedder(cfg, dialogues, annotations, "the corpus image provider")?;
            let provider = corpus_provider(candidates, backend).map_err(|e| config_error(format!("augment: {e}")))?;
            Ok(Box::new(provider))
        }
        ProviderKind::Http => {
            let endpoint = cfg
                .augment
                .endpoint
                .clone()
                .ok_or_else(|| config_error("augment.endpoint is required for the http provider"))?;
            let provider = HttpImageProvider::new("http", endpoint).map_err(|e| FatalBackend(e.0))?;
            Ok(Box::new(provider))
        }
    }
}
