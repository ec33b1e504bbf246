//! Evaluation metrics and report aggregation.

mod objects;
mod report;
mod scores;

pub use objects::{extract_objects, lexical_objects, parse_object_reply, ObjectExtraction};
pub use report::{
    aggregate, aggregate_run_dir, AggregateOptions, EvalInputs, EvaluationReport, InstanceRow, IntentGold,
    OutcomeCounts, ReportError, ReportMeta, RetrievalScores,
};
pub use scores::{
    avg_token_f1, completeness, consistency, cosine, decision_scores, descriptiveness, intent_set_f1,
    parse_failure_ratio, refusal_ratio, salient_f1, token_f1, DecisionScores, MetricError, DESCRIPTIVENESS_WEIGHT,
};
