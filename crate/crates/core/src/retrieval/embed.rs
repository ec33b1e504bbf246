use std::collections::HashMap;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::data::ImageRef;
use crate::text::word_tokens;

pub type Vector = Vec<f32>;

/// A failed embedding call; `index` points into the batch when known.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct EmbedError {
    pub index: Option<usize>,
    pub message: String,
}

impl EmbedError {
    pub fn new(message: impl Into<String>) -> Self {
        Self { index: None, message: message.into() }
    }

    pub fn at(index: usize, message: impl Into<String>) -> Self {
        Self { index: Some(index), message: message.into() }
    }
}

/// Maps texts and images into a shared vector space.
pub trait EmbeddingBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError>;
    fn embed_images(&self, images: &[ImageRef]) -> Result<Vec<Vector>, EmbedError>;
}

/// Deterministic bag-of-words embedder: every token owns a pseudo-random
/// direction derived from its hash, and a text is the sum of its tokens.
/// Images embed their id the same way under a separate namespace.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    id: String,
    dim: usize,
}

impl HashEmbedder {
    pub fn new(id: impl Into<String>, dim: usize) -> Self {
        Self { id: id.into(), dim: dim.max(1) }
    }

    fn token_vector(&self, namespace: &str, token: &str) -> Vec<f64> {
        let digest = Sha256::new()
            .chain_update(self.id.as_bytes())
            .chain_update([0])
            .chain_update(namespace.as_bytes())
            .chain_update([0])
            .chain_update(token.as_bytes())
            .finalize();
        let mut rng = rand_chacha::ChaCha8Rng::from_seed(digest.into());
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    pub fn embed_text(&self, text: &str) -> Vector {
        let tokens = word_tokens(text);
        let mut acc = vec![0.0f64; self.dim];
        if tokens.is_empty() {
            acc = self.token_vector("raw", text);
        }
        for t in &tokens {
            for (a, v) in acc.iter_mut().zip(self.token_vector("tok", t)) {
                *a += v;
            }
        }
        acc.into_iter().map(|v| v as f32).collect()
    }

    pub fn embed_image(&self, image: &ImageRef) -> Vector {
        self.token_vector("img", &image.id).into_iter().map(|v| v as f32).collect()
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }

    fn embed_images(&self, images: &[ImageRef]) -> Result<Vec<Vector>, EmbedError> {
        Ok(images.iter().map(|i| self.embed_image(i)).collect())
    }
}

/// Lookup-table embedder for tests: exact texts and image ids map to fixed
/// vectors; anything else goes to the hash fallback or fails.
#[derive(Debug, Clone)]
pub struct TableEmbedder {
    id: String,
    dim: usize,
    texts: HashMap<String, Vector>,
    images: HashMap<String, Vector>,
    fallback: Option<HashEmbedder>,
}

impl TableEmbedder {
    pub fn new(id: impl Into<String>, dim: usize) -> Self {
        Self { id: id.into(), dim, texts: HashMap::new(), images: HashMap::new(), fallback: None }
    }

    pub fn with_text(mut self, text: impl Into<String>, v: Vector) -> Self {
        self.insert_text(text, v);
        self
    }

    pub fn with_image(mut self, image_id: impl Into<String>, v: Vector) -> Self {
        self.insert_image(image_id, v);
        self
    }

    pub fn insert_text(&mut self, text: impl Into<String>, v: Vector) {
        assert_eq!(v.len(), self.dim, "vector length must equal dim");
        self.texts.insert(text.into(), v);
    }

    pub fn insert_image(&mut self, image_id: impl Into<String>, v: Vector) {
        assert_eq!(v.len(), self.dim, "vector length must equal dim");
        self.images.insert(image_id.into(), v);
    }

    /// Unknown inputs are embedded by a hash embedder of the same dim.
    pub fn with_hash_fallback(mut self) -> Self {
        self.fallback = Some(HashEmbedder::new(format!("{}/fallback", self.id), self.dim));
        self
    }
}

impl EmbeddingBackend for TableEmbedder {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| match (self.texts.get(t), &self.fallback) {
                (Some(v), _) => Ok(v.clone()),
                (None, Some(h)) => Ok(h.embed_text(t)),
                (None, None) => Err(EmbedError::at(i, format!("no vector for text `{t}`"))),
            })
            .collect()
    }

    fn embed_images(&self, images: &[ImageRef]) -> Result<Vec<Vector>, EmbedError> {
        images
            .iter()
            .enumerate()
            .map(|(i, img)| match (self.images.get(&img.id), &self.fallback) {
                (Some(v), _) => Ok(v.clone()),
                (None, Some(h)) => Ok(h.embed_image(img)),
                (None, None) => Err(EmbedError::at(i, format!("no vector for image `{}`", img.id))),
            })
            .collect()
    }
}

/// Client for an embedding service:
/// `GET {base}/meta` returns `{"dim": n}`,
/// `POST {base}/embed/text` takes `{"texts": [...]}`,
/// `POST {base}/embed/image` takes `{"uris": [...]}`;
/// both embed endpoints answer with an array of float arrays.
pub struct HttpEmbedder {
    id: String,
    base_url: String,
    dim: usize,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct Meta {
    dim: usize,
}

impl HttpEmbedder {
    /// Connects and reads the advertised dimension.
    pub fn connect(id: impl Into<String>, base_url: impl Into<String>) -> Result<Self, EmbedError> {
        let base_url = base_url.into().trim_end_matches('/').to_owned();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| EmbedError::new(e.to_string()))?;
        let meta: Meta = client
            .get(format!("{base_url}/meta"))
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| EmbedError::new(format!("meta endpoint: {e}")))?;
        Ok(Self { id: id.into(), base_url, dim: meta.dim, client })
    }

    fn post(&self, path: &str, body: serde_json::Value, expected: usize) -> Result<Vec<Vector>, EmbedError> {
        let vectors: Vec<Vector> = self
            .client
            .post(format!("{}/{path}", self.base_url))
            .json(&body)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| EmbedError::new(format!("{path}: {e}")))?;
        if vectors.len() != expected {
            return Err(EmbedError::new(format!("{path}: expected {expected} vectors, got {}", vectors.len())));
        }
        if let Some(i) = vectors.iter().position(|v| v.len() != self.dim) {
            return Err(EmbedError::at(i, format!("vector of length {} (dim {})", vectors[i].len(), self.dim)));
        }
        Ok(vectors)
    }
}

impl EmbeddingBackend for HttpEmbedder {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError> {
        self.post("embed/text", serde_json::json!({ "texts": texts }), texts.len())
    }

    fn embed_images(&self, images: &[ImageRef]) -> Result<Vec<Vector>, EmbedError> {
        let uris: Vec<&str> = images.iter().map(|i| i.uri.as_str()).collect();
        self.post("embed/image", serde_json::json!({ "uris": uris }), images.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos(a: &[f32], b: &[f32]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
        let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn hash_embedder_is_deterministic_and_lexical() {
        let h = HashEmbedder::new("h", 64);
        assert_eq!(h.embed_text("A red cat"), h.embed_text("a red cat!"));
        assert_eq!(h.embed_text("").len(), 64);
        let near = cos(&h.embed_text("a red cat on a sofa"), &h.embed_text("a red cat"));
        let far = cos(&h.embed_text("a red cat on a sofa"), &h.embed_text("mountain lake sunrise"));
        assert!(near > far);
        let other = HashEmbedder::new("other", 64);
        assert_ne!(h.embed_text("cat"), other.embed_text("cat"));
    }

    #[test]
    fn table_embedder_lookup_and_fallback() {
        let t = TableEmbedder::new("t", 2).with_text("q", vec![1.0, 0.0]).with_image("i", vec![0.0, 1.0]);
        assert_eq!(t.embed_texts(&["q".into()]).unwrap(), vec![vec![1.0, 0.0]]);
        let err = t.embed_texts(&["q".into(), "x".into()]).unwrap_err();
        assert_eq!(err.index, Some(1));
        let t = t.with_hash_fallback();
        assert_eq!(t.embed_images(&[ImageRef::corpus("zzz", "u")]).unwrap()[0].len(), 2);
    }
}
