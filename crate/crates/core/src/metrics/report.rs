use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::objects::extract_objects;
use super::scores::{
    avg_token_f1, completeness, consistency, decision_scores, descriptiveness, intent_set_f1, parse_failure_ratio,
    refusal_ratio, salient_f1, token_f1, DecisionScores, MetricError,
};
use crate::data::{AnnotationMap, AnnotationRecord, Decision, Dialogue, IntentLabel};
use crate::llm::{Gateway, GenConfig};
use crate::pipeline::{
    load_stage1, load_stage2, DecisionRecord, DescriptionRecord, RecordOutcome, RunDirError, StageRecord, STAGE1_FILE,
    STAGE2_FILE,
};
use crate::retrieval::{mrr, recall_at_k, EmbeddingBackend, RankedRetrieval, RetrievalError};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{stage} records do not match the gold dialogues: {detail}")]
    IdMismatch { stage: String, detail: String },
    #[error("no run artifacts in {0}")]
    MissingRun(PathBuf),
    #[error(transparent)]
    Run(#[from] RunDirError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// How annotators' intent sets combine into the gold set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentGold {
    #[default]
    Union,
    Intersection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateOptions {
    pub intent_gold: IntentGold,
    /// Sentence token F1 against the best-matching annotator needed for
    /// the joint "all correct" rate.
    pub all_sentence_threshold: f64,
    /// Score salient spans (only meaningful for runs that asked for them).
    pub salient: bool,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self { intent_gold: IntentGold::Union, all_sentence_threshold: 0.5, salient: false }
    }
}

/// Everything an evaluation looks at. Absent parts leave their metrics n/a.
#[derive(Clone, Copy)]
pub struct EvalInputs<'a> {
    pub dialogues: &'a [Dialogue],
    pub annotations: &'a AnnotationMap,
    pub stage1: Option<&'a [DecisionRecord]>,
    pub stage2: Option<&'a [DescriptionRecord]>,
    pub retrieval: Option<&'a [RankedRetrieval]>,
    /// Joint text/image embedder for descriptiveness and consistency.
    pub embedder: Option<&'a dyn EmbeddingBackend>,
    /// Model used for object extraction; lexical matching otherwise.
    pub objects: Option<(&'a Gateway, &'a GenConfig)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub parsed: usize,
    pub refusal: usize,
    pub parse_error: usize,
    pub failed: usize,
    pub skipped: usize,
}

impl OutcomeCounts {
    fn of<T>(records: &[StageRecord<T>]) -> Self {
        let mut c = Self::default();
        for r in records {
            match r.outcome {
                RecordOutcome::Parsed { .. } => c.parsed += 1,
                RecordOutcome::Refusal => c.refusal += 1,
                RecordOutcome::ParseError { .. } => c.parse_error += 1,
                RecordOutcome::Failed => c.failed += 1,
                RecordOutcome::Skipped => c.skipped += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.parsed + self.refusal + self.parse_error + self.failed + self.skipped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub dialogue_id: String,
    pub gold_decision: Option<Decision>,
    pub stage1_outcome: Option<String>,
    pub pred_decision: Option<Decision>,
    pub intent_f1: Option<f64>,
    pub sentence_f1: Option<f64>,
    pub all_correct: Option<bool>,
    pub stage2_outcome: Option<String>,
    pub descriptiveness: Option<f64>,
    pub completeness: Option<f64>,
    pub consistency: Option<f64>,
    pub salient_f1: Option<f64>,
    pub gold_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub token_normalization: String,
    pub scoring_convention: String,
    pub intent_gold: IntentGold,
    pub intent_aggregation: String,
    pub all_sentence_threshold: f64,
    pub completeness_excluded: usize,
}

/// Corpus-level scores; `None` marks a metric with nothing to score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub instances: usize,
    pub decision: Option<DecisionScores>,
    pub intent_f1: Option<f64>,
    pub sentence_f1: Option<f64>,
    pub all_correct: Option<f64>,
    pub descriptiveness: Option<f64>,
    pub completeness: Option<f64>,
    pub consistency: Option<f64>,
    pub salient_f1: Option<f64>,
    pub refusal_ratio: Option<f64>,
    pub parse_failure_ratio: Option<f64>,
    pub retrieval: Option<RetrievalScores>,
    pub stage1_counts: Option<OutcomeCounts>,
    pub stage2_counts: Option<OutcomeCounts>,
    pub metadata: ReportMeta,
    pub per_instance: Vec<InstanceRow>,
}

fn outcome_tag<T>(o: &RecordOutcome<T>) -> String {
    match o {
        RecordOutcome::Parsed { .. } => "parsed".into(),
        RecordOutcome::Refusal => "refusal".into(),
        RecordOutcome::ParseError { reason } => format!("parse_error:{reason}"),
        RecordOutcome::Failed => "failed".into(),
        RecordOutcome::Skipped => "skipped".into(),
    }
}

fn index_records<'a, T>(
    stage: &str,
    records: &'a [StageRecord<T>],
    gold_ids: &BTreeSet<&str>,
) -> Result<HashMap<&'a str, &'a StageRecord<T>>, ReportError> {
    let mismatch = |detail: String| ReportError::IdMismatch { stage: stage.to_owned(), detail };
    let mut map = HashMap::new();
    for r in records {
        if !gold_ids.contains(r.dialogue_id.as_str()) {
            return Err(mismatch(format!("unknown dialogue `{}`", r.dialogue_id)));
        }
        if map.insert(r.dialogue_id.as_str(), r).is_some() {
            return Err(mismatch(format!("duplicate dialogue `{}`", r.dialogue_id)));
        }
    }
    if let Some(missing) = gold_ids.iter().find(|id| !map.contains_key(*id)) {
        return Err(mismatch(format!("no record for dialogue `{missing}`")));
    }
    Ok(map)
}

fn gold_intents(anns: &[AnnotationRecord], how: IntentGold) -> BTreeSet<IntentLabel> {
    let mut sets = anns.iter().map(|a| a.intents.clone());
    let first = sets.next().unwrap_or_default();
    sets.fold(first, |acc, s| match how {
        IntentGold::Union => acc.union(&s).copied().collect(),
        IntentGold::Intersection => acc.intersection(&s).copied().collect(),
    })
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn embed_one_text(backend: &dyn EmbeddingBackend, text: &str) -> Result<Vec<f32>, MetricError> {
    backend
        .embed_texts(&[text.to_owned()])
        .map_err(|e| MetricError::Embedding(e.message))?
        .pop()
        .ok_or_else(|| MetricError::Embedding("no vector".into()))
}

pub fn aggregate(inputs: EvalInputs<'_>, options: AggregateOptions) -> Result<EvaluationReport, ReportError> {
    let mut dialogues: Vec<&Dialogue> = inputs.dialogues.iter().collect();
    dialogues.sort_by(|a, b| a.dialogue_id.cmp(&b.dialogue_id));
    let gold_ids: BTreeSet<&str> = dialogues.iter().map(|d| d.dialogue_id.as_str()).collect();
    let stage1 = inputs.stage1.map(|r| index_records("stage1", r, &gold_ids)).transpose()?;
    let stage2 = inputs.stage2.map(|r| index_records("stage2", r, &gold_ids)).transpose()?;
    let ranks: Option<HashMap<&str, Option<usize>>> =
        inputs.retrieval.map(|rs| rs.iter().map(|r| (r.query_id.as_str(), r.gold_rank)).collect());

    let mut rows = Vec::with_capacity(dialogues.len());
    let mut completeness_excluded = 0;
    for d in &dialogues {
        let id = d.dialogue_id.as_str();
        let anns: &[AnnotationRecord] = inputs.annotations.get(id).map(Vec::as_slice).unwrap_or(&[]);
        let mut row = InstanceRow { dialogue_id: id.to_owned(), ..Default::default() };

        if let Some(rec) = stage1.as_ref().map(|m| m[id]) {
            let pred = rec.scored_decision();
            row.gold_decision = Some(d.gold_decision());
            row.stage1_outcome = Some(outcome_tag(&rec.outcome));
            row.pred_decision = Some(pred);
            let gold = gold_intents(anns, options.intent_gold);
            if d.gold_decision() == Decision::Yes && !anns.is_empty() && !gold.is_empty() {
                let (pred_intents, sentence) = match rec.value() {
                    Some(o) if pred == Decision::Yes => (o.intents.clone(), o.sentence.as_str()),
                    _ => (BTreeSet::new(), ""),
                };
                let triggers: Vec<&str> = anns.iter().map(|a| a.trigger_sentence.as_str()).collect();
                let intent = intent_set_f1(&pred_intents, &gold)?;
                let best = triggers.iter().map(|t| token_f1(sentence, t)).fold(0.0, f64::max);
                row.intent_f1 = Some(intent);
                row.sentence_f1 = Some(avg_token_f1(sentence, &triggers)?);
                row.all_correct =
                    Some(pred == Decision::Yes && pred_intents == gold && best >= options.all_sentence_threshold);
            }
        }

        if let Some(rec) = stage2.as_ref().map(|m| m[id]) {
            row.stage2_outcome = Some(outcome_tag(&rec.outcome));
            if let Some(out) = rec.value() {
                if let (Some(backend), Some(img)) = (inputs.embedder, &d.gold_image) {
                    let text_vec = embed_one_text(backend, &out.description)?;
                    let img_vec = backend
                        .embed_images(std::slice::from_ref(img))
                        .map_err(|e| MetricError::Embedding(e.message))?
                        .pop()
                        .ok_or_else(|| MetricError::Embedding("no vector".into()))?;
                    row.descriptiveness = Some(descriptiveness(&text_vec, &img_vec)?);
                }
                if d.gold_objects.is_empty() {
                    completeness_excluded += 1;
                } else {
                    let pred = extract_objects(&out.description, inputs.objects).objects;
                    row.completeness = Some(completeness(&pred, &d.gold_objects)?);
                }
                let refs: Vec<&str> =
                    anns.iter().map(|a| a.image_description.as_str()).filter(|s| !s.trim().is_empty()).collect();
                if let (Some(backend), false) = (inputs.embedder, refs.is_empty()) {
                    row.consistency = Some(consistency(&out.description, &refs, backend)?);
                }
                let spans: Vec<Vec<String>> = anns.iter().map(|a| a.salient_spans.clone()).collect();
                if options.salient && spans.iter().any(|s| !s.is_empty()) {
                    row.salient_f1 = Some(salient_f1(&out.salient, &spans)?);
                }
            }
        }

        if let Some(r) = ranks.as_ref().and_then(|m| m.get(id)) {
            row.gold_rank = *r;
        }
        rows.push(row);
    }

    let decision = match stage1.as_ref() {
        Some(_) => {
            let preds: Vec<Decision> = rows.iter().filter_map(|r| r.pred_decision).collect();
            let golds: Vec<Decision> = rows.iter().filter_map(|r| r.gold_decision).collect();
            (!preds.is_empty()).then(|| decision_scores(&preds, &golds)).transpose()?
        }
        None => None,
    };
    let retrieval = match inputs.retrieval {
        Some(rs) if !rs.is_empty() => Some(RetrievalScores {
            r1: recall_at_k(rs, 1)?,
            r5: recall_at_k(rs, 5)?,
            r10: recall_at_k(rs, 10)?,
            mrr: mrr(rs)?,
        }),
        _ => None,
    };
    let headline = inputs.stage1.filter(|r| !r.is_empty());
    let (refusal, parse_failure) = match (headline, inputs.stage2.filter(|r| !r.is_empty())) {
        (Some(s1), _) => (Some(refusal_ratio(s1)?), Some(parse_failure_ratio(s1)?)),
        (None, Some(s2)) => (Some(refusal_ratio(s2)?), Some(parse_failure_ratio(s2)?)),
        (None, None) => (None, None),
    };

    Ok(EvaluationReport {
        instances: rows.len(),
        decision,
        intent_f1: mean(rows.iter().map(|r| r.intent_f1)),
        sentence_f1: mean(rows.iter().map(|r| r.sentence_f1)),
        all_correct: mean(rows.iter().map(|r| r.all_correct.map(|b| if b { 1.0 } else { 0.0 }))),
        descriptiveness: mean(rows.iter().map(|r| r.descriptiveness)),
        completeness: mean(rows.iter().map(|r| r.completeness)),
        consistency: mean(rows.iter().map(|r| r.consistency)),
        salient_f1: mean(rows.iter().map(|r| r.salient_f1)),
        refusal_ratio: refusal,
        parse_failure_ratio: parse_failure,
        retrieval,
        stage1_counts: inputs.stage1.map(OutcomeCounts::of),
        stage2_counts: inputs.stage2.map(OutcomeCounts::of),
        metadata: ReportMeta {
            token_normalization: "lowercase, strip punctuation, drop a/an/the, split on whitespace".into(),
            scoring_convention: "refusals, parse errors and failed calls score as decision no".into(),
            intent_gold: options.intent_gold,
            intent_aggregation: "per-instance set F1, averaged over gold-positive annotated instances".into(),
            all_sentence_threshold: options.all_sentence_threshold,
            completeness_excluded,
        },
        per_instance: rows,
    })
}

/// Loads `stage1.jsonl` / `stage2.jsonl` from `run_dir` and aggregates.
/// Fails with `MissingRun` when neither file exists.
pub fn aggregate_run_dir(
    run_dir: &Path,
    inputs: EvalInputs<'_>,
    options: AggregateOptions,
) -> Result<EvaluationReport, ReportError> {
    let s1_path = run_dir.join(STAGE1_FILE);
    let s2_path = run_dir.join(STAGE2_FILE);
    if !s1_path.is_file() && !s2_path.is_file() {
        return Err(ReportError::MissingRun(run_dir.to_owned()));
    }
    let stage1 = s1_path.is_file().then(|| load_stage1(run_dir)).transpose()?;
    let stage2 = s2_path.is_file().then(|| load_stage2(run_dir)).transpose()?;
    aggregate(EvalInputs { stage1: stage1.as_deref(), stage2: stage2.as_deref(), ..inputs }, options)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |x| format!("{x:.4}"))
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned two-column console table.
    pub fn to_text(&self) -> String {
        let mut lines: Vec<(String, String)> = vec![("instances".into(), self.instances.to_string())];
        let d = self.decision;
        lines.push(("decision macro F1".into(), fmt_opt(d.map(|d| d.macro_f1))));
        lines.push(("decision macro precision".into(), fmt_opt(d.map(|d| d.macro_precision))));
        lines.push(("decision macro recall".into(), fmt_opt(d.map(|d| d.macro_recall))));
        lines.push(("intent F1".into(), fmt_opt(self.intent_f1)));
        lines.push(("sentence F1".into(), fmt_opt(self.sentence_f1)));
        lines.push(("all correct".into(), fmt_opt(self.all_correct)));
        lines.push(("descriptiveness".into(), fmt_opt(self.descriptiveness)));
        lines.push(("completeness".into(), fmt_opt(self.completeness)));
        lines.push(("consistency".into(), fmt_opt(self.consistency)));
        lines.push(("salient F1".into(), fmt_opt(self.salient_f1)));
        lines.push(("refusal ratio".into(), fmt_opt(self.refusal_ratio)));
        lines.push(("parse failure ratio".into(), fmt_opt(self.parse_failure_ratio)));
        let r = self.retrieval;
        lines.push(("R@1".into(), fmt_opt(r.map(|r| r.r1))));
        lines.push(("R@5".into(), fmt_opt(r.map(|r| r.r5))));
        lines.push(("R@10".into(), fmt_opt(r.map(|r| r.r10))));
        lines.push(("MRR".into(), fmt_opt(r.map(|r| r.mrr))));
        let width = lines.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in lines {
            let _ = writeln!(out, "{k:<width$}  {v:>8}");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.per_instance {
            w.serialize(row).expect("row serializes");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
    }

    /// Named headline scores, for quick comparison.
    pub fn headline(&self) -> BTreeMap<&'static str, Option<f64>> {
        BTreeMap::from([
            ("decision_macro_f1", self.decision.map(|d| d.macro_f1)),
            ("intent_f1", self.intent_f1),
            ("sentence_f1", self.sentence_f1),
            ("consistency", self.consistency),
            ("r1", self.retrieval.map(|r| r.r1)),
            ("mrr", self.retrieval.map(|r| r.mrr)),
            ("refusal_ratio", self.refusal_ratio),
        ])
    }
}
