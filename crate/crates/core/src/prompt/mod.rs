//! Prompt rendering from the bundled templates.

mod names;
mod template;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::{Decision, Dialogue, IntentLabel};

pub use names::{assign_speaker_names, NamePool, SpeakerNames};
pub use template::{has_unresolved_placeholders, Template, TemplateId};

/// Appended on its own line before the answer slot in chain-of-thought mode.
pub const COT_LINE: &str = "Let's think step by step.";
/// Rendered in place of the share turn's text.
pub const SHARE_MARKER: &str = "[Sharing Image]";
const ANSWER_SLOT: &str = "Answer:";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("name pool needs at least 2 names, has {0}")]
    PoolTooSmall(usize),
    #[error("duplicate name `{0}` in name pool")]
    DuplicateName(String),
    #[error("transcript cutoff {cutoff} out of range for {len} turns")]
    CutoffOutOfRange { cutoff: usize, len: usize },
    #[error("dialogue `{0}` has no share turn")]
    MissingShareTurn(String),
    #[error("dialogue `{0}` has no turns")]
    EmptyDialogue(String),
    #[error("image description is empty")]
    EmptyDescription,
    #[error("no value for template placeholder `{0}`")]
    MissingValue(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMeta {
    pub names: Vec<String>,
    pub cutoff: Option<usize>,
    pub shots: usize,
    pub cot: bool,
}

/// A fully rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub template_id: TemplateId,
    pub metadata: PromptMeta,
}

/// Where a decision prompt cuts the dialogue and who would share next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Probe {
    /// Number of history turns shown.
    pub cutoff: usize,
    pub share_speaker: u8,
}

impl Probe {
    /// Evaluation-mode probe: the gold share turn for positive instances,
    /// the end of the dialogue for negative ones (the speaker who did not
    /// talk last would share next).
    pub fn for_evaluation(dialogue: &Dialogue) -> Result<Probe, PromptError> {
        match dialogue.share_turn_index {
            Some(t) => Ok(Probe { cutoff: t, share_speaker: dialogue.turns[t].speaker_id }),
            None => {
                let last =
                    dialogue.turns.last().ok_or_else(|| PromptError::EmptyDialogue(dialogue.dialogue_id.clone()))?;
                Ok(Probe { cutoff: dialogue.turns.len(), share_speaker: 1 - last.speaker_id.min(1) })
            }
        }
    }

    /// Inference-mode probes: after every turn spoken by the partner of
    /// `share_speaker`.
    pub fn inference(dialogue: &Dialogue, share_speaker: u8) -> Vec<Probe> {
        dialogue
            .turns
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_image_turn && t.speaker_id != share_speaker)
            .map(|(i, _)| Probe { cutoff: i + 1, share_speaker })
            .collect()
    }
}

/// Renders `<Name>: <text>` lines for turns `0..cutoff`.
pub fn render_transcript(
    dialogue: &Dialogue,
    names: &SpeakerNames,
    cutoff: usize,
    mark_share: bool,
) -> Result<String, PromptError> {
    if cutoff == 0 || cutoff > dialogue.turns.len() {
        return Err(PromptError::CutoffOutOfRange { cutoff, len: dialogue.turns.len() });
    }
    let lines: Vec<String> = dialogue.turns[..cutoff]
        .iter()
        .enumerate()
        .map(|(j, turn)| {
            let name = names.get(turn.speaker_id);
            let is_share = mark_share && dialogue.share_turn_index == Some(j);
            if is_share || (turn.is_image_turn && turn.text.trim().is_empty()) {
                format!("{name}: {SHARE_MARKER}")
            } else {
                format!("{name}: {}", turn.text)
            }
        })
        .collect();
    Ok(lines.join("\n"))
}

/// Which keys the gold payload of a few-shot exemplar carries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExemplarPayload {
    #[default]
    Full,
    DecisionOnly,
}

/// A solved decision example shown before the query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotExample {
    pub dialogue: Dialogue,
    pub names: SpeakerNames,
    pub decision: Decision,
    pub intents: BTreeSet<IntentLabel>,
    pub sentence: String,
}

#[derive(Debug, Clone, Default)]
pub struct Stage1Options {
    pub cot: bool,
    pub shots: Vec<FewShotExample>,
    pub payload: ExemplarPayload,
}

/// The dictionary-literal answer payload of the decision stage, rendered as
/// JSON with keys in prompt order.
pub fn render_stage1_payload(
    decision: Decision,
    intents: &BTreeSet<IntentLabel>,
    sentence: &str,
    mode: ExemplarPayload,
) -> String {
    let prediction = serde_json::to_string(decision.as_str()).expect("string");
    match mode {
        ExemplarPayload::DecisionOnly => format!("{{\"Prediction\": {prediction}}}"),
        ExemplarPayload::Full => {
            let options: Vec<String> =
                intents.iter().map(|i| serde_json::to_string(&i.option_line()).expect("string")).collect();
            format!(
                "{{\"Prediction\": {prediction}, \"Intent\": [{}], \"Sentence\": {}}}",
                options.join(", "),
                serde_json::to_string(sentence).expect("string"),
            )
        }
    }
}

fn speaker_values(names: &SpeakerNames) -> HashMap<&'static str, &str> {
    HashMap::from([("speaker1", names.get(0)), ("speaker2", names.get(1))])
}

fn stage1_block(dialogue: &Dialogue, names: &SpeakerNames, probe: Probe) -> Result<String, PromptError> {
    let transcript = render_transcript(dialogue, names, probe.cutoff, false)?;
    let mut values = speaker_values(names);
    values.insert("share_speaker", names.get(probe.share_speaker));
    values.insert("dialogue", &transcript);
    TemplateId::Stage1.template().render(&values)
}

/// Decision prompt at the gold share turn (history only).
pub fn build_stage1_prompt(
    dialogue: &Dialogue,
    names: &SpeakerNames,
    options: &Stage1Options,
) -> Result<PromptText, PromptError> {
    if dialogue.share_turn_index.is_none() {
        return Err(PromptError::MissingShareTurn(dialogue.dialogue_id.clone()));
    }
    build_stage1_prompt_at(dialogue, names, Probe::for_evaluation(dialogue)?, options)
}

/// Decision prompt at an arbitrary probe point.
pub fn build_stage1_prompt_at(
    dialogue: &Dialogue,
    names: &SpeakerNames,
    probe: Probe,
    options: &Stage1Options,
) -> Result<PromptText, PromptError> {
    let mut blocks = Vec::with_capacity(options.shots.len() + 1);
    for shot in &options.shots {
        let shot_probe = Probe::for_evaluation(&shot.dialogue)?;
        let block = stage1_block(&shot.dialogue, &shot.names, shot_probe)?;
        let payload = render_stage1_payload(shot.decision, &shot.intents, &shot.sentence, options.payload);
        blocks.push(format!("{block} {payload}"));
    }
    let mut query = stage1_block(dialogue, names, probe)?;
    if options.cot {
        let head = query.strip_suffix(ANSWER_SLOT).expect("decision template ends with the answer slot");
        query = format!("{head}{COT_LINE}\n{ANSWER_SLOT}");
    }
    blocks.push(query);
    Ok(PromptText {
        text: blocks.join("\n\n"),
        template_id: TemplateId::Stage1,
        metadata: PromptMeta {
            names: names.as_vec(),
            cutoff: Some(probe.cutoff),
            shots: options.shots.len(),
            cot: options.cot,
        },
    })
}

/// Description prompt: the transcript through the marked share turn.
pub fn build_stage2_prompt(dialogue: &Dialogue, names: &SpeakerNames) -> Result<PromptText, PromptError> {
    build_stage2_prompt_with(dialogue, names, false)
}

/// Description prompt, optionally the variant that also asks for the
/// salient words or phrases under a `"Salient"` key.
pub fn build_stage2_prompt_with(
    dialogue: &Dialogue,
    names: &SpeakerNames,
    salient: bool,
) -> Result<PromptText, PromptError> {
    let t = dialogue.share_turn_index.ok_or_else(|| PromptError::MissingShareTurn(dialogue.dialogue_id.clone()))?;
    let transcript = render_transcript(dialogue, names, t + 1, true)?;
    let mut values = speaker_values(names);
    values.insert("share_speaker", names.get(dialogue.turns[t].speaker_id));
    values.insert("dialogue", &transcript);
    let id = if salient { TemplateId::Stage2Salient } else { TemplateId::Stage2 };
    Ok(PromptText {
        text: id.template().render(&values)?,
        template_id: id,
        metadata: PromptMeta { names: names.as_vec(), cutoff: Some(t + 1), ..Default::default() },
    })
}

/// Augmentation prompt over the full dialogue.
pub fn build_augment_prompt(dialogue: &Dialogue, names: &SpeakerNames) -> Result<PromptText, PromptError> {
    if dialogue.turns.is_empty() {
        return Err(PromptError::EmptyDialogue(dialogue.dialogue_id.clone()));
    }
    let len = dialogue.turns.len();
    let transcript = render_transcript(dialogue, names, len, false)?;
    let mut values = speaker_values(names);
    values.insert("dialogue", &transcript);
    Ok(PromptText {
        text: TemplateId::Augment.template().render(&values)?,
        template_id: TemplateId::Augment,
        metadata: PromptMeta { names: names.as_vec(), cutoff: Some(len), ..Default::default() },
    })
}

/// Per-moment description prompt used during augmentation: turns
/// `0..=after_turn`, then a `[Sharing Image]` line for `share_speaker`.
pub fn build_augment_describe_prompt(
    dialogue: &Dialogue,
    names: &SpeakerNames,
    after_turn: usize,
    share_speaker: u8,
) -> Result<PromptText, PromptError> {
    let cutoff = after_turn + 1;
    let history = render_transcript(dialogue, names, cutoff, false)?;
    let transcript = format!("{history}\n{}: {SHARE_MARKER}", names.get(share_speaker));
    let mut values = speaker_values(names);
    values.insert("share_speaker", names.get(share_speaker));
    values.insert("dialogue", &transcript);
    Ok(PromptText {
        text: TemplateId::AugmentDescribe.template().render(&values)?,
        template_id: TemplateId::AugmentDescribe,
        metadata: PromptMeta { names: names.as_vec(), cutoff: Some(cutoff), ..Default::default() },
    })
}

/// Object-extraction prompt for the completeness metric.
pub fn build_object_extraction_prompt(description: &str) -> Result<PromptText, PromptError> {
    if description.trim().is_empty() {
        return Err(PromptError::EmptyDescription);
    }
    let values = HashMap::from([("description", description)]);
    Ok(PromptText {
        text: TemplateId::ObjectExtract.template().render(&values)?,
        template_id: TemplateId::ObjectExtract,
        metadata: PromptMeta::default(),
    })
}

/// Draws `k` exemplars with a balanced yes/no mix (yes gets the extra one
/// when `k` is odd), topping up from the other class when one runs short.
/// Selection and order are fixed by `seed`.
pub fn select_exemplars(pool: &[FewShotExample], k: usize, seed: u64) -> Vec<FewShotExample> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut yes: Vec<&FewShotExample> = pool.iter().filter(|e| e.decision == Decision::Yes).collect();
    let mut no: Vec<&FewShotExample> = pool.iter().filter(|e| e.decision == Decision::No).collect();
    yes.shuffle(&mut rng);
    no.shuffle(&mut rng);
    let k = k.min(pool.len());
    let want_yes = k.div_ceil(2).min(yes.len());
    let want_no = (k - want_yes).min(no.len());
    let want_yes = (k - want_no).min(yes.len());
    let mut picked: Vec<FewShotExample> = yes[..want_yes].iter().chain(&no[..want_no]).map(|e| (*e).clone()).collect();
    picked.shuffle(&mut rng);
    picked
}
