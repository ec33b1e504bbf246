//! Dataset augmentation: finds image-sharing moments in finished
//! dialogues, describes and attaches an image to each, and summarizes the
//! model's rationales.

mod moments;
mod provider;
mod rationale;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dialogue;
use crate::llm::{default_config, Gateway, GenConfig, Stage};
use crate::pipeline::{parse_stage2_with, RefusalLexicon, StageOutcome};
use crate::prompt::{assign_speaker_names, build_augment_describe_prompt, build_augment_prompt, NamePool, PromptError};
use crate::retrieval::RetrievalError;

pub use moments::{
    parse_moments, AugmentedDialogue, MomentWarning, SharingMoment, WarningKind, DEFAULT_MATCH_THRESHOLD,
};
pub use provider::{corpus_provider, CorpusProvider, HttpImageProvider, ImageProvider, ProviderError};
pub use rationale::{
    analyze_rationales, analyze_rationales_with, RationaleAnalysis, RationaleLexicon, VerbObjectCount,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error("dialogue `{0}` has no turns")]
    EmptyDialogue(String),
    #[error("image corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone)]
pub struct AugmentOptions {
    pub names: NamePool,
    pub augment_config: GenConfig,
    pub describe_config: GenConfig,
    pub match_threshold: f64,
    pub workers: usize,
    pub lexicon: RefusalLexicon,
}

impl AugmentOptions {
    pub fn new(backend_id: &str, names: NamePool) -> Self {
        Self {
            names,
            augment_config: default_config(Stage::Augment).with_backend(backend_id),
            describe_config: default_config(Stage::Stage2).with_backend(backend_id),
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            workers: 4,
            lexicon: RefusalLexicon::bundled().clone(),
        }
    }
}

/// One model reply seen while augmenting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    /// `moments`, or `describe@<turn_index>`.
    pub request: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentResult {
    pub dialogue: AugmentedDialogue,
    pub warnings: Vec<MomentWarning>,
    pub raw: Vec<RawResponse>,
}

fn flag(moment: &mut SharingMoment, warnings: &mut Vec<MomentWarning>, kind: WarningKind, detail: String) {
    moment.flag = Some(format!("{}: {detail}", kind.as_str()));
    warnings.push(MomentWarning { kind, line: None, detail: format!("turn {}: {detail}", moment.turn_index) });
}

/// Finds sharing moments over the full dialogue, then describes each one
/// and acquires its image. Per-moment failures leave the moment flagged
/// and incomplete rather than failing the dialogue.
pub fn augment_dialogue(
    dialogue: &Dialogue,
    gateway: &Gateway,
    provider: &dyn ImageProvider,
    options: &AugmentOptions,
) -> Result<AugmentResult, AugmentError> {
    if dialogue.turns.is_empty() {
        return Err(AugmentError::EmptyDialogue(dialogue.dialogue_id.clone()));
    }
    let names = assign_speaker_names(dialogue, &options.names)?;
    let prompt = build_augment_prompt(dialogue, &names)?;
    let mut warnings = Vec::new();
    let mut raw = Vec::new();
    let answer = match gateway.complete(&prompt, &options.augment_config) {
        Ok(res) => res.text,
        Err(e) => {
            warnings.push(MomentWarning { kind: WarningKind::GatewayFailed, line: None, detail: e.to_string() });
            String::new()
        }
    };
    raw.push(RawResponse { request: "moments".into(), text: answer.clone() });
    let (mut moments, line_warnings) = parse_moments(&answer, dialogue, &names, options.match_threshold);
    warnings.extend(line_warnings);

    for moment in &mut moments {
        let speaker = names.speaker_of(&moment.speaker).expect("parsed speakers resolve");
        let prompt = build_augment_describe_prompt(dialogue, &names, moment.turn_index, speaker)?;
        let reply = match gateway.complete(&prompt, &options.describe_config) {
            Ok(res) => res.text,
            Err(e) => {
                flag(moment, &mut warnings, WarningKind::GatewayFailed, e.to_string());
                continue;
            }
        };
        raw.push(RawResponse { request: format!("describe@{}", moment.turn_index), text: reply.clone() });
        match parse_stage2_with(&reply, &options.lexicon) {
            StageOutcome::Parsed(out) if out.prefix_ok => moment.description = out.description,
            StageOutcome::Parsed(_) => {
                flag(moment, &mut warnings, WarningKind::DescriptionFailed, "description-prefix".into());
                continue;
            }
            StageOutcome::Refusal { .. } => {
                flag(moment, &mut warnings, WarningKind::DescriptionFailed, "refusal".into());
                continue;
            }
            StageOutcome::ParseError { reason, .. } => {
                flag(moment, &mut warnings, WarningKind::DescriptionFailed, reason.to_string());
                continue;
            }
        }
        match provider.acquire(&moment.description) {
            Ok(image) => moment.image = Some(image),
            Err(e) => flag(moment, &mut warnings, WarningKind::ProviderFailed, e.0),
        }
    }

    Ok(AugmentResult { dialogue: AugmentedDialogue { base: dialogue.clone(), moments }, warnings, raw })
}

/// Augments dialogues in parallel; results follow input order.
pub fn augment_all(
    dialogues: &[Dialogue],
    gateway: &Gateway,
    provider: &dyn ImageProvider,
    options: &AugmentOptions,
) -> Vec<Result<AugmentResult, AugmentError>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(options.workers.max(1)).build().expect("worker pool");
    pool.install(|| dialogues.par_iter().map(|d| augment_dialogue(d, gateway, provider, options)).collect())
}

#[cfg(test)]
mod tests;
