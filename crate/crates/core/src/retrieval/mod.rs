//! Cosine retrieval over image candidates, with Recall@k and MRR.

mod embed;
mod index;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dialogue, Turn};
use crate::pipeline::{Pipeline, RecordOutcome};

pub use embed::{EmbedError, EmbeddingBackend, HashEmbedder, HttpEmbedder, TableEmbedder, Vector};
pub use index::{normalize, RetrievalIndex};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RetrievalError {
    #[error("embedding failed for `{id}`: {message}")]
    EmbeddingFailure { id: String, message: String },
    #[error("duplicate candidate id `{0}`")]
    DuplicateId(String),
    #[error("no candidates to index")]
    EmptyCandidates,
    #[error("index built with backend `{index}`, query embedded with `{query}`")]
    BackendMismatch { index: String, query: String },
    #[error("gold id `{0}` is not in the candidate pool")]
    UnknownGoldId(String),
    #[error("result for query `{0}` has no gold rank")]
    MissingGoldRank(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("rounds must be non-negative, got {0}")]
    NegativeRounds(i64),
    #[error("query embedding failed: {0}")]
    QueryEmbedding(String),
    #[error("description failed: {0}")]
    Describe(String),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("index io: {0}")]
    Io(String),
}

/// Candidates for one query, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRetrieval {
    pub query_id: String,
    pub ranking: Vec<String>,
    pub scores: Vec<f64>,
    /// 1-based position of the gold candidate.
    pub gold_rank: Option<usize>,
}

/// Which candidates each query is ranked against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidatePool {
    /// Every indexed candidate.
    #[default]
    All,
    /// The gold candidate plus `size - 1` others drawn per query.
    Sampled { size: usize, seed: u64 },
}

pub fn build_index(
    candidates: &[crate::data::ImageRef],
    backend: &dyn EmbeddingBackend,
) -> Result<RetrievalIndex, RetrievalError> {
    RetrievalIndex::build(candidates, backend)
}

fn ranked(
    index: &RetrievalIndex,
    query_id: &str,
    query: &[f32],
    rows: Option<&[usize]>,
    gold_id: Option<&str>,
) -> Result<RankedRetrieval, RetrievalError> {
    let gold_pos = match gold_id {
        Some(g) => Some(index.position(g).ok_or_else(|| RetrievalError::UnknownGoldId(g.to_owned()))?),
        None => None,
    };
    let unit = normalize(query).unwrap_or_else(|| vec![0.0; index.dim()]);
    let all = index.scores(&unit);
    let mut order: Vec<usize> = match rows {
        Some(r) => r.to_vec(),
        None => (0..index.len()).collect(),
    };
    if let Some(g) = gold_pos {
        if !order.contains(&g) {
            return Err(RetrievalError::UnknownGoldId(index.ids()[g].clone()));
        }
    }
    order.sort_by(|&a, &b| all[b].total_cmp(&all[a]).then_with(|| index.ids()[a].cmp(&index.ids()[b])));
    Ok(RankedRetrieval {
        query_id: query_id.to_owned(),
        gold_rank: gold_pos.and_then(|g| order.iter().position(|&i| i == g)).map(|p| p + 1),
        scores: order.iter().map(|&i| all[i]).collect(),
        ranking: order.iter().map(|&i| index.ids()[i].clone()).collect(),
    })
}

/// Ranks every candidate by cosine to a precomputed query vector.
pub fn rank_vector(
    index: &RetrievalIndex,
    query_id: &str,
    query: &[f32],
    gold_id: Option<&str>,
) -> Result<RankedRetrieval, RetrievalError> {
    ranked(index, query_id, query, None, gold_id)
}

fn embed_query(index: &RetrievalIndex, query: &str, backend: &dyn EmbeddingBackend) -> Result<Vector, RetrievalError> {
    if backend.backend_id() != index.backend_id() {
        return Err(RetrievalError::BackendMismatch {
            index: index.backend_id().to_owned(),
            query: backend.backend_id().to_owned(),
        });
    }
    let mut v = backend.embed_texts(&[query.to_owned()]).map_err(|e| RetrievalError::QueryEmbedding(e.message))?;
    v.pop().ok_or_else(|| RetrievalError::QueryEmbedding("backend returned no vector".into()))
}

/// Embeds `query` with `backend` and ranks all candidates: descending
/// cosine, ties by candidate id ascending.
pub fn rank(
    index: &RetrievalIndex,
    query_id: &str,
    query: &str,
    backend: &dyn EmbeddingBackend,
    gold_id: Option<&str>,
) -> Result<RankedRetrieval, RetrievalError> {
    let v = embed_query(index, query, backend)?;
    ranked(index, query_id, &v, None, gold_id)
}

/// Candidate rows for one query under `pool`. A sampled pool always holds
/// the gold candidate; the draw depends only on the seed and query id.
pub fn pool_rows(
    index: &RetrievalIndex,
    pool: CandidatePool,
    query_id: &str,
    gold_id: &str,
) -> Result<Vec<usize>, RetrievalError> {
    let gold = index.position(gold_id).ok_or_else(|| RetrievalError::UnknownGoldId(gold_id.to_owned()))?;
    match pool {
        CandidatePool::All => Ok((0..index.len()).collect()),
        CandidatePool::Sampled { size, seed } => {
            let digest = Sha256::new()
                .chain_update(query_id.as_bytes())
                .chain_update([0])
                .chain_update(seed.to_le_bytes())
                .finalize();
            let mut rng = rand_chacha::ChaCha8Rng::from_seed(digest.into());
            let mut others: Vec<usize> = (0..index.len()).filter(|&i| i != gold).collect();
            others.shuffle(&mut rng);
            others.truncate(size.saturating_sub(1));
            others.push(gold);
            Ok(others)
        }
    }
}

/// Ranks within the candidate pool of this query.
pub fn rank_in_pool(
    index: &RetrievalIndex,
    query_id: &str,
    query: &str,
    backend: &dyn EmbeddingBackend,
    gold_id: &str,
    pool: CandidatePool,
) -> Result<RankedRetrieval, RetrievalError> {
    let rows = pool_rows(index, pool, query_id, gold_id)?;
    let v = embed_query(index, query, backend)?;
    ranked(index, query_id, &v, Some(&rows), Some(gold_id))
}

fn gold_ranks(results: &[RankedRetrieval]) -> Result<Vec<usize>, RetrievalError> {
    results.iter().map(|r| r.gold_rank.ok_or_else(|| RetrievalError::MissingGoldRank(r.query_id.clone()))).collect()
}

/// Fraction of results whose gold rank is at most `k`; 0 for no results.
pub fn recall_at_k(results: &[RankedRetrieval], k: usize) -> Result<f64, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    let ranks = gold_ranks(results)?;
    if ranks.is_empty() {
        return Ok(0.0);
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Mean reciprocal gold rank; 0 for no results.
pub fn mrr(results: &[RankedRetrieval]) -> Result<f64, RetrievalError> {
    let ranks = gold_ranks(results)?;
    if ranks.is_empty() {
        return Ok(0.0);
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// How a multi-round dialogue becomes a retrieval query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// Describe the image to share from the context, then rank by the
    /// description.
    DescriptionQuery,
    /// Rank by the raw context text.
    ConcatContext,
}

/// Produces an image description for a dialogue whose last turn is the
/// image to share.
pub trait Describer: Sync {
    fn describe(&self, dialogue: &Dialogue) -> Result<String, String>;
}

impl Describer for Pipeline<'_> {
    fn describe(&self, dialogue: &Dialogue) -> Result<String, String> {
        let record = self.run_describe(dialogue);
        match record.outcome {
            RecordOutcome::Parsed { value } => Ok(value.description),
            RecordOutcome::Refusal => Err("refusal".into()),
            RecordOutcome::ParseError { reason } => Err(reason.to_string()),
            RecordOutcome::Failed => Err(record.error.unwrap_or_default()),
            RecordOutcome::Skipped => Err("skipped".into()),
        }
    }
}

/// The caption as a first turn, then the first `rounds` question/answer
/// rounds (two turns each), then the image turn. Longer contexts extend
/// shorter ones.
pub fn multiround_context(dialogue: &Dialogue, caption: &str, rounds: usize) -> Dialogue {
    let mut turns = vec![Turn::new(0, caption)];
    turns.extend(dialogue.turns.iter().filter(|t| !t.is_image_turn).take(rounds * 2).cloned());
    turns.push(Turn::image(0));
    Dialogue {
        dialogue_id: dialogue.dialogue_id.clone(),
        share_turn_index: Some(turns.len() - 1),
        turns,
        gold_image: dialogue.gold_image.clone(),
        gold_objects: dialogue.gold_objects.clone(),
    }
}

/// The query text for `rounds` rounds of context. With zero rounds the
/// caption alone is the query in both modes.
pub fn multiround_query(
    dialogue: &Dialogue,
    caption: &str,
    rounds: i64,
    mode: QueryMode,
    describer: &dyn Describer,
) -> Result<String, RetrievalError> {
    let rounds = usize::try_from(rounds).map_err(|_| RetrievalError::NegativeRounds(rounds))?;
    if rounds == 0 {
        return Ok(caption.to_owned());
    }
    let context = multiround_context(dialogue, caption, rounds);
    match mode {
        QueryMode::DescriptionQuery => describer.describe(&context).map_err(RetrievalError::Describe),
        QueryMode::ConcatContext => {
            Ok(context.turns.iter().filter(|t| !t.is_image_turn).map(|t| t.text.as_str()).collect::<Vec<_>>().join(" "))
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn rank_multiround(
    index: &RetrievalIndex,
    dialogue: &Dialogue,
    caption: &str,
    rounds: i64,
    backend: &dyn EmbeddingBackend,
    mode: QueryMode,
    describer: &dyn Describer,
    gold_id: Option<&str>,
) -> Result<RankedRetrieval, RetrievalError> {
    let query = multiround_query(dialogue, caption, rounds, mode, describer)?;
    rank(index, &dialogue.dialogue_id, &query, backend, gold_id)
}
