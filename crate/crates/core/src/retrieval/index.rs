use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embed::{EmbeddingBackend, Vector};
use super::RetrievalError;
use crate::data::ImageRef;

const BATCH: usize = 32;
const MAX_IN_FLIGHT: usize = 4;

/// Unit-normalized candidate vectors for exact cosine search.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    ids: Vec<String>,
    /// Row-major, one unit row per candidate.
    matrix: Vec<f32>,
    dim: usize,
    backend_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexMeta {
    ids: Vec<String>,
    dim: usize,
    backend_id: String,
    normalized: bool,
}

/// Scales `v` to unit length, accumulating in f64. `None` for zero or
/// non-finite vectors.
pub fn normalize(v: &[f32]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.iter().map(|x| *x as f64 / norm).collect())
}

impl RetrievalIndex {
    /// Embeds every candidate once, in parallel batches.
    pub fn build(candidates: &[ImageRef], backend: &dyn EmbeddingBackend) -> Result<Self, RetrievalError> {
        if candidates.is_empty() {
            return Err(RetrievalError::EmptyCandidates);
        }
        let mut seen = HashSet::new();
        for c in candidates {
            if !seen.insert(c.id.as_str()) {
                return Err(RetrievalError::DuplicateId(c.id.clone()));
            }
        }
        let dim = backend.dim();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(MAX_IN_FLIGHT).build().expect("embedding pool");
        let batches: Vec<Result<Vec<Vector>, RetrievalError>> = pool.install(|| {
            candidates
                .par_chunks(BATCH)
                .map(|chunk| {
                    backend.embed_images(chunk).map_err(|e| RetrievalError::EmbeddingFailure {
                        id: chunk[e.index.unwrap_or(0).min(chunk.len() - 1)].id.clone(),
                        message: e.message,
                    })
                })
                .collect()
        });
        let mut matrix = Vec::with_capacity(candidates.len() * dim);
        let vectors = batches.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().flatten();
        for (c, v) in candidates.iter().zip(vectors) {
            if v.len() != dim {
                return Err(RetrievalError::EmbeddingFailure {
                    id: c.id.clone(),
                    message: format!("vector of length {} (dim {dim})", v.len()),
                });
            }
            let unit = normalize(&v).ok_or_else(|| RetrievalError::EmbeddingFailure {
                id: c.id.clone(),
                message: "zero or non-finite vector".into(),
            })?;
            matrix.extend(unit.into_iter().map(|x| x as f32));
        }
        Ok(Self {
            ids: candidates.iter().map(|c| c.id.clone()).collect(),
            matrix,
            dim,
            backend_id: backend.backend_id().to_owned(),
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|c| c == id)
    }

    /// Cosine of a unit query against every row.
    pub(crate) fn scores(&self, unit_query: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| self.row(i).iter().zip(unit_query).map(|(r, q)| *r as f64 * q).sum()).collect()
    }

    fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
        (dir.join(format!("{name}.vecs")), dir.join(format!("{name}.meta.json")))
    }

    /// Writes `<name>.vecs` (little-endian f32 rows) and `<name>.meta.json`.
    pub fn save(&self, dir: impl AsRef<Path>, name: &str) -> Result<(), RetrievalError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| RetrievalError::Io(e.to_string()))?;
        let (vecs, meta) = Self::paths(dir, name);
        let bytes: Vec<u8> = self.matrix.iter().flat_map(|x| x.to_le_bytes()).collect();
        std::fs::write(&vecs, bytes).map_err(|e| RetrievalError::Io(format!("{}: {e}", vecs.display())))?;
        let sidecar =
            IndexMeta { ids: self.ids.clone(), dim: self.dim, backend_id: self.backend_id.clone(), normalized: true };
        let json = serde_json::to_string_pretty(&sidecar).expect("index meta serializes");
        std::fs::write(&meta, json).map_err(|e| RetrievalError::Io(format!("{}: {e}", meta.display())))
    }

    pub fn exists(dir: impl AsRef<Path>, name: &str) -> bool {
        let (vecs, meta) = Self::paths(dir.as_ref(), name);
        vecs.is_file() && meta.is_file()
    }

    pub fn load(dir: impl AsRef<Path>, name: &str) -> Result<Self, RetrievalError> {
        let (vecs, meta) = Self::paths(dir.as_ref(), name);
        let text =
            std::fs::read_to_string(&meta).map_err(|e| RetrievalError::Io(format!("{}: {e}", meta.display())))?;
        let sidecar: IndexMeta = serde_json::from_str(&text)
            .map_err(|e| RetrievalError::CorruptIndex(format!("{}: {e}", meta.display())))?;
        let bytes = std::fs::read(&vecs).map_err(|e| RetrievalError::Io(format!("{}: {e}", vecs.display())))?;
        if !sidecar.normalized || bytes.len() != sidecar.ids.len() * sidecar.dim * 4 {
            return Err(RetrievalError::CorruptIndex(format!(
                "{}: {} bytes for {} rows of dim {}",
                vecs.display(),
                bytes.len(),
                sidecar.ids.len(),
                sidecar.dim
            )));
        }
        let matrix = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Ok(Self { ids: sidecar.ids, matrix, dim: sidecar.dim, backend_id: sidecar.backend_id })
    }
}
