//! Offline stand-ins that answer with gold data, for end-to-end checks and
//! demos without a live model.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;

use crate::data::{AnnotationMap, AnnotationRecord, Decision, Dialogue};
use crate::llm::StubMatch;
use crate::pipeline::RenderedPrompt;
use crate::prompt::{
    assign_speaker_names, render_stage1_payload, ExemplarPayload, FewShotExample, NamePool, PromptError,
};
use crate::retrieval::{HashEmbedder, TableEmbedder};

/// The refusal injected by [`inject_refusals`].
pub const REFUSAL_TEXT: &str = "I'm sorry, I cannot assist with that request.";

/// First annotator by id: the one whose sentence and description are
/// echoed.
fn lead(anns: &[AnnotationRecord]) -> Option<&AnnotationRecord> {
    anns.iter().min_by(|a, b| a.annotator_id.cmp(&b.annotator_id))
}

/// Few-shot exemplar answered with the same gold payload the echo stub uses.
pub fn gold_exemplar(
    dialogue: &Dialogue,
    anns: &[AnnotationRecord],
    names: &NamePool,
) -> Result<FewShotExample, PromptError> {
    let decision = dialogue.gold_decision();
    let (intents, sentence) = match (decision, lead(anns)) {
        (Decision::Yes, Some(first)) => {
            (anns.iter().flat_map(|a| a.intents.iter().copied()).collect(), first.trigger_sentence.clone())
        }
        _ => (BTreeSet::new(), String::new()),
    };
    Ok(FewShotExample {
        names: assign_speaker_names(dialogue, names)?,
        dialogue: dialogue.clone(),
        decision,
        intents,
        sentence,
    })
}

/// Decision payload carrying the gold answer: the union of annotator
/// intents and the lead annotator's trigger sentence.
pub fn gold_stage1_payload(dialogue: &Dialogue, anns: &[AnnotationRecord]) -> String {
    match (dialogue.gold_decision(), lead(anns)) {
        (Decision::Yes, Some(first)) => {
            let intents: BTreeSet<_> = anns.iter().flat_map(|a| a.intents.iter().copied()).collect();
            render_stage1_payload(Decision::Yes, &intents, &first.trigger_sentence, ExemplarPayload::Full)
        }
        (decision, _) => render_stage1_payload(decision, &BTreeSet::new(), "", ExemplarPayload::Full),
    }
}

/// Description payload with the lead annotator's description and spans.
pub fn gold_stage2_payload(anns: &[AnnotationRecord]) -> Option<String> {
    let first = lead(anns)?;
    Some(
        serde_json::json!({
            "Image Description": first.image_description,
            "Salient": first.salient_spans,
        })
        .to_string(),
    )
}

/// Stub rules answering each rendered prompt with its gold payload.
pub fn gold_echo_rules(
    prompts: &[RenderedPrompt],
    dialogues: &[Dialogue],
    annotations: &AnnotationMap,
) -> Vec<(StubMatch, String)> {
    let empty = Vec::new();
    prompts
        .iter()
        .filter_map(|p| {
            let d = dialogues.iter().find(|d| d.dialogue_id == p.dialogue_id)?;
            let anns = annotations.get(&d.dialogue_id).unwrap_or(&empty);
            let payload = match p.stage.as_str() {
                "stage1" => gold_stage1_payload(d, anns),
                "stage2" => gold_stage2_payload(anns)?,
                _ => return None,
            };
            Some((StubMatch::Fingerprint(p.fingerprint.clone()), payload))
        })
        .collect()
}

/// Picks exactly `round(rate * n)` of the `n` dialogue ids, fixed by
/// `seed`.
pub fn refusal_set(dialogue_ids: &[String], rate: f64, seed: u64) -> BTreeSet<String> {
    let n = dialogue_ids.len();
    let k = ((rate.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<&String> = dialogue_ids.iter().collect();
    ids.sort();
    sample(&mut rng, n, k).into_iter().map(|i| ids[i].clone()).collect()
}

/// Replaces the decision answers of the chosen dialogues with a refusal.
pub fn inject_refusals(
    rules: Vec<(StubMatch, String)>,
    prompts: &[RenderedPrompt],
    refused: &BTreeSet<String>,
) -> Vec<(StubMatch, String)> {
    let targets: BTreeSet<&str> = prompts
        .iter()
        .filter(|p| p.stage == "stage1" && refused.contains(&p.dialogue_id))
        .map(|p| p.fingerprint.as_str())
        .collect();
    rules
        .into_iter()
        .map(|(m, text)| match &m {
            StubMatch::Fingerprint(f) if targets.contains(f.as_str()) => (m, REFUSAL_TEXT.to_owned()),
            _ => (m, text),
        })
        .collect()
}

/// Embedder placing every annotator description of a dialogue exactly on
/// its gold image vector. Image vectors come from a hash embedder, so
/// distinct images are nearly orthogonal in high dimension.
pub fn gold_embedder(id: &str, dim: usize, dialogues: &[Dialogue], annotations: &AnnotationMap) -> TableEmbedder {
    let hash = HashEmbedder::new(format!("{id}/images"), dim);
    let mut table = TableEmbedder::new(id, dim).with_hash_fallback();
    for d in dialogues {
        let Some(img) = &d.gold_image else { continue };
        let v = hash.embed_image(img);
        table.insert_image(img.id.clone(), v.clone());
        for a in annotations.get(&d.dialogue_id).into_iter().flatten() {
            table.insert_text(a.image_description.clone(), v.clone());
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refusal_set_is_exact_and_seeded() {
        let ids: Vec<String> = (0..25).map(|i| format!("d{i}")).collect();
        let a = refusal_set(&ids, 0.2, 3);
        assert_eq!(a.len(), 5);
        assert_eq!(a, refusal_set(&ids, 0.2, 3));
        let mut shuffled = ids.clone();
        shuffled.reverse();
        assert_eq!(a, refusal_set(&shuffled, 0.2, 3));
        assert_eq!(refusal_set(&ids, 1.0, 0).len(), 25);
        assert!(refusal_set(&ids, 0.0, 0).is_empty());
    }
}
