use std::collections::{BTreeSet, HashMap};

use crate::data::{Decision, IntentLabel, ObjectSet};
use crate::pipeline::{RecordOutcome, StageRecord};
use crate::retrieval::EmbeddingBackend;
use crate::text::normalize_tokens;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("reference set is empty")]
    EmptyReferenceSet,
    #[error("{preds} predictions for {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no input")]
    EmptyInput,
    #[error("gold set is empty")]
    EmptyGold,
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector")]
    ZeroVector,
    #[error("embedding failed: {0}")]
    Embedding(String),
}

/// Token-level F1 after extractive-QA normalization. Both empty scores 1,
/// exactly one empty scores 0.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = normalize_tokens(pred);
    let g = normalize_tokens(gold);
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn avg_token_f1<S: AsRef<str>>(pred: &str, golds: &[S]) -> Result<f64, MetricError> {
    if golds.is_empty() {
        return Err(MetricError::EmptyReferenceSet);
    }
    Ok(golds.iter().map(|g| token_f1(pred, g.as_ref())).sum::<f64>() / golds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecisionScores {
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
}

/// Macro-averaged precision, recall and F1 over the yes and no classes.
/// A class never predicted has precision 0; never present, recall 0.
pub fn decision_scores(preds: &[Decision], golds: &[Decision]) -> Result<DecisionScores, MetricError> {
    if preds.len() != golds.len() {
        return Err(MetricError::LengthMismatch { preds: preds.len(), golds: golds.len() });
    }
    if preds.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut out = DecisionScores { macro_f1: 0.0, macro_precision: 0.0, macro_recall: 0.0 };
    for class in [Decision::Yes, Decision::No] {
        let pairs = preds.iter().zip(golds);
        let tp = pairs.clone().filter(|(p, g)| **p == class && **g == class).count();
        let predicted = preds.iter().filter(|p| **p == class).count();
        let actual = golds.iter().filter(|g| **g == class).count();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        out.macro_f1 += f1 / 2.0;
        out.macro_precision += precision / 2.0;
        out.macro_recall += recall / 2.0;
    }
    Ok(out)
}

pub fn intent_set_f1(pred: &BTreeSet<IntentLabel>, gold: &BTreeSet<IntentLabel>) -> Result<f64, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    Ok(2.0 * pred.intersection(gold).count() as f64 / (pred.len() + gold.len()) as f64)
}

pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch(a.len(), b.len()));
    }
    let norm = |v: &[f32]| v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Weight of the clipped cosine in the image-text matching score.
pub const DESCRIPTIVENESS_WEIGHT: f64 = 2.5;

/// Image-text matching score `2.5 * max(0, cos)`.
pub fn descriptiveness(desc_vec: &[f32], img_vec: &[f32]) -> Result<f64, MetricError> {
    Ok(DESCRIPTIVENESS_WEIGHT * cosine(desc_vec, img_vec)?.max(0.0))
}

/// Share of gold objects found in the prediction.
pub fn completeness(pred: &ObjectSet, gold: &ObjectSet) -> Result<f64, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    Ok(gold.intersection(pred).count() as f64 / gold.len() as f64)
}

/// Mean cosine between the description and each reference description.
pub fn consistency<S: AsRef<str>>(
    desc: &str,
    references: &[S],
    backend: &dyn EmbeddingBackend,
) -> Result<f64, MetricError> {
    if references.is_empty() {
        return Err(MetricError::EmptyReferenceSet);
    }
    let mut texts = vec![desc.to_owned()];
    texts.extend(references.iter().map(|r| r.as_ref().to_owned()));
    let vectors = backend.embed_texts(&texts).map_err(|e| MetricError::Embedding(e.message))?;
    let (first, rest) = vectors.split_first().ok_or_else(|| MetricError::Embedding("no vectors".into()))?;
    let mut total = 0.0;
    for v in rest {
        total += cosine(first, v)?;
    }
    Ok(total / references.len() as f64)
}

/// Averaged token F1 of the space-joined spans against each annotator's
/// space-joined spans. Annotators with no spans are not references.
pub fn salient_f1<S: AsRef<str>>(
    pred_spans: &[S],
    gold_spans_per_annotator: &[Vec<String>],
) -> Result<f64, MetricError> {
    let join = |spans: &[S]| spans.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(" ");
    let golds: Vec<String> = gold_spans_per_annotator.iter().filter(|s| !s.is_empty()).map(|s| s.join(" ")).collect();
    avg_token_f1(&join(pred_spans), &golds)
}

/// Share of records whose outcome is a refusal.
pub fn refusal_ratio<T>(records: &[StageRecord<T>]) -> Result<f64, MetricError> {
    outcome_ratio(records, |o| matches!(o, RecordOutcome::Refusal))
}

pub fn parse_failure_ratio<T>(records: &[StageRecord<T>]) -> Result<f64, MetricError> {
    outcome_ratio(records, |o| matches!(o, RecordOutcome::ParseError { .. }))
}

fn outcome_ratio<T>(records: &[StageRecord<T>], hit: impl Fn(&RecordOutcome<T>) -> bool) -> Result<f64, MetricError> {
    if records.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(records.iter().filter(|r| hit(&r.outcome)).count() as f64 / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::object_set;
    use crate::retrieval::{HashEmbedder, TableEmbedder};
    use Decision::{No, Yes};

    #[test]
    fn token_f1_examples() {
        assert_eq!(token_f1("An image of a red cat", "A photo of a red cat"), 0.75);
        assert_eq!(token_f1("same words here", "same words here"), 1.0);
        assert_eq!(token_f1("", "cat"), 0.0);
        assert_eq!(token_f1("", "the."), 1.0);
        assert_eq!(token_f1("cat cat", "cat"), 2.0 * 0.5 * 1.0 / 1.5);
    }

    #[test]
    fn avg_token_f1_examples() {
        assert_eq!(avg_token_f1("red cat", &["red cat", "blue dog"]).unwrap(), 0.5);
        assert_eq!(avg_token_f1("red cat", &["red dog"]).unwrap(), token_f1("red cat", "red dog"));
        assert_eq!(avg_token_f1::<&str>("x", &[]), Err(MetricError::EmptyReferenceSet));
    }

    #[test]
    fn decision_examples() {
        let s = decision_scores(&[Yes, No, Yes, No], &[Yes, Yes, No, No]).unwrap();
        assert_eq!((s.macro_f1, s.macro_precision, s.macro_recall), (0.5, 0.5, 0.5));
        let s = decision_scores(&[Yes, No], &[Yes, No]).unwrap();
        assert_eq!((s.macro_f1, s.macro_precision, s.macro_recall), (1.0, 1.0, 1.0));
        assert_eq!(decision_scores(&[Yes], &[]), Err(MetricError::LengthMismatch { preds: 1, golds: 0 }));
        // Only one class present anywhere: the absent class contributes 0.
        assert_eq!(decision_scores(&[Yes, Yes], &[Yes, Yes]).unwrap().macro_f1, 0.5);
    }

    #[test]
    fn intent_examples() {
        use IntentLabel::*;
        let gold = BTreeSet::from([SocialBonding, VisualClarification]);
        let f = intent_set_f1(&BTreeSet::from([VisualClarification]), &gold).unwrap();
        assert!((f - 0.6667).abs() < 1e-4);
        assert_eq!(intent_set_f1(&gold, &gold).unwrap(), 1.0);
        assert_eq!(intent_set_f1(&BTreeSet::new(), &gold).unwrap(), 0.0);
        assert_eq!(intent_set_f1(&gold, &BTreeSet::new()), Err(MetricError::EmptyGold));
    }

    #[test]
    fn descriptiveness_examples() {
        let d = descriptiveness(&[0.3, (1.0f32 - 0.09).sqrt()], &[1.0, 0.0]).unwrap();
        assert!((d - 0.75).abs() < 1e-6);
        assert_eq!(descriptiveness(&[-0.1, 0.99], &[1.0, 0.0]).unwrap(), 0.0);
        assert!((descriptiveness(&[0.6, 0.8], &[0.6, 0.8]).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(descriptiveness(&[1.0], &[1.0, 0.0]), Err(MetricError::DimensionMismatch(1, 2)));
        assert_eq!(descriptiveness(&[0.0, 0.0], &[1.0, 0.0]), Err(MetricError::ZeroVector));
    }

    #[test]
    fn completeness_examples() {
        let gold = object_set(["Cake", "Coffee", "Dessert"]).unwrap();
        let pred = object_set(["Cake", "Tea"]).unwrap();
        assert!((completeness(&pred, &gold).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(completeness(&gold, &gold).unwrap(), 1.0);
        assert_eq!(completeness(&ObjectSet::new(), &gold).unwrap(), 0.0);
        assert_eq!(completeness(&pred, &ObjectSet::new()), Err(MetricError::EmptyGold));
    }

    #[test]
    fn consistency_examples() {
        let h = HashEmbedder::new("h", 32);
        assert!((consistency("An image of a dog", &["An image of a dog"], &h).unwrap() - 1.0).abs() < 1e-6);
        let t = TableEmbedder::new("t", 2)
            .with_text("d", vec![1.0, 0.0])
            .with_text("r1", vec![2.0, 0.0])
            .with_text("r2", vec![0.0, 1.0]);
        assert!((consistency("d", &["r1", "r2"], &t).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(consistency::<&str>("d", &[], &t), Err(MetricError::EmptyReferenceSet));
    }

    #[test]
    fn salient_examples() {
        let one = vec![vec!["red cat".to_owned()]];
        assert_eq!(salient_f1(&["red cat"], &one).unwrap(), 1.0);
        let two = vec![vec!["red cat".to_owned()], vec!["blue dog".to_owned()]];
        assert_eq!(salient_f1(&["red cat"], &two).unwrap(), 0.5);
        assert_eq!(salient_f1::<&str>(&[], &one).unwrap(), 0.0);
        assert_eq!(salient_f1(&["x"], &[vec![]]), Err(MetricError::EmptyReferenceSet));
    }
}
