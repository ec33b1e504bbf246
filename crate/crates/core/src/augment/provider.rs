use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;

use super::AugmentError;
use crate::data::{ImageRef, ImageSource};
use crate::llm::sha256_hex;
use crate::retrieval::{build_index, rank, EmbeddingBackend, RetrievalIndex};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("image provider: {0}")]
pub struct ProviderError(pub String);

/// Finds or makes an image matching a description.
pub trait ImageProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn acquire(&self, description: &str) -> Result<ImageRef, ProviderError>;
}

/// Top-1 cosine match from an indexed image corpus.
pub struct CorpusProvider {
    index: RetrievalIndex,
    images: HashMap<String, ImageRef>,
    backend: Arc<dyn EmbeddingBackend>,
    id: String,
}

pub fn corpus_provider(
    source_images: &[ImageRef],
    backend: Arc<dyn EmbeddingBackend>,
) -> Result<CorpusProvider, AugmentError> {
    if source_images.is_empty() {
        return Err(AugmentError::EmptyCorpus);
    }
    let index = build_index(source_images, backend.as_ref())?;
    Ok(CorpusProvider {
        images: source_images.iter().map(|i| (i.id.clone(), i.clone())).collect(),
        id: format!("corpus:{}", backend.backend_id()),
        index,
        backend,
    })
}

impl ImageProvider for CorpusProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn acquire(&self, description: &str) -> Result<ImageRef, ProviderError> {
        let ranked = rank(&self.index, "acquire", description, self.backend.as_ref(), None)
            .map_err(|e| ProviderError(e.to_string()))?;
        let best = ranked.ranking.first().ok_or_else(|| ProviderError("empty ranking".into()))?;
        Ok(self.images[best].clone())
    }
}

/// Client for a generation service: `POST {endpoint}` with
/// `{"description": ...}` answers `{"image_uri": ...}`.
pub struct HttpImageProvider {
    id: String,
    endpoint: String,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct Generated {
    image_uri: String,
}

impl HttpImageProvider {
    pub fn new(id: impl Into<String>, endpoint: impl Into<String>) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| ProviderError(e.to_string()))?;
        Ok(Self { id: id.into(), endpoint: endpoint.into(), client })
    }
}

impl ImageProvider for HttpImageProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn acquire(&self, description: &str) -> Result<ImageRef, ProviderError> {
        let out: Generated = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "description": description }))
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| ProviderError(e.to_string()))?;
        Ok(ImageRef {
            id: sha256_hex(&out.image_uri)[..16].to_owned(),
            uri: out.image_uri,
            source: ImageSource::Generated,
        })
    }
}
