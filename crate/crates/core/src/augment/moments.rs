use serde::{Deserialize, Serialize};

use crate::data::{Dialogue, FieldViolation, ImageRef};
use crate::metrics::token_f1;
use crate::prompt::SpeakerNames;
use crate::text::{collapse_whitespace, has_description_prefix};

/// Default token-F1 needed to anchor a paraphrased utterance to a turn.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.8;

/// A point where an image could be shared: after `turn_index`, by
/// `speaker`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingMoment {
    pub turn_index: usize,
    pub speaker: String,
    pub rationale: String,
    #[serde(default)]
    pub description: String,
    pub image: Option<ImageRef>,
    /// Why the moment is incomplete, when it is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

/// A dialogue with its detected sharing moments, sorted by turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedDialogue {
    #[serde(flatten)]
    pub base: Dialogue,
    pub moments: Vec<SharingMoment>,
}

impl AugmentedDialogue {
    pub fn validate(&self) -> Result<(), FieldViolation> {
        self.base.validate()?;
        let mut previous: Option<usize> = None;
        for (i, m) in self.moments.iter().enumerate() {
            let field = |name: &str| format!("moments[{i}].{name}");
            if m.turn_index >= self.base.turns.len() {
                return Err(FieldViolation::new(
                    field("turn_index"),
                    format!("{} out of range for {} turns", m.turn_index, self.base.turns.len()),
                ));
            }
            if previous.is_some_and(|p| p >= m.turn_index) {
                return Err(FieldViolation::new(field("turn_index"), "moments must be sorted with unique turns"));
            }
            previous = Some(m.turn_index);
            if !starts_with_to(&m.rationale) {
                return Err(FieldViolation::new(field("rationale"), "must start with \"To\""));
            }
            if m.speaker.trim().is_empty() {
                return Err(FieldViolation::new(field("speaker"), "must be nonempty"));
            }
            if !m.description.is_empty() && !has_description_prefix(&m.description) {
                return Err(FieldViolation::new(
                    field("description"),
                    "must start with \"An image of\" or \"A photo of\"",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarningKind {
    BadFormat,
    RationalePrefix,
    UnmatchedUtterance,
    UnknownSpeaker,
    DuplicateMoment,
    DescriptionFailed,
    ProviderFailed,
    GatewayFailed,
}

impl WarningKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WarningKind::BadFormat => "bad-format",
            WarningKind::RationalePrefix => "rationale-prefix",
            WarningKind::UnmatchedUtterance => "unmatched-utterance",
            WarningKind::UnknownSpeaker => "unknown-speaker",
            WarningKind::DuplicateMoment => "duplicate-moment",
            WarningKind::DescriptionFailed => "description-failed",
            WarningKind::ProviderFailed => "provider-failed",
            WarningKind::GatewayFailed => "gateway-failed",
        }
    }
}

/// A dropped line or an incomplete moment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MomentWarning {
    pub kind: WarningKind,
    /// 1-based line of the model answer, when the warning is about a line.
    pub line: Option<usize>,
    pub detail: String,
}

pub(crate) fn starts_with_to(rationale: &str) -> bool {
    rationale.split_whitespace().next().is_some_and(|w| w.eq_ignore_ascii_case("to"))
}

/// Drops list numbering such as `1.` or `2)`.
fn strip_numbering(line: &str) -> &str {
    let t = line.trim_start();
    let digits = t.len() - t.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        if let Some(rest) = t[digits..].strip_prefix(['.', ')']) {
            return rest.trim_start();
        }
    }
    t
}

fn strip_quotes(s: &str) -> &str {
    s.trim().trim_matches(|c: char| matches!(c, '"' | '\'' | '\u{201C}' | '\u{201D}' | '<' | '>')).trim()
}

/// Turn index the utterance refers to: exact after whitespace folding, or
/// the best token-F1 match reaching `threshold` (earliest turn on ties).
fn match_turn(utterance: &str, dialogue: &Dialogue, names: &SpeakerNames, threshold: f64) -> Option<usize> {
    let mut text = strip_quotes(utterance);
    if let Some((head, rest)) = text.split_once(':') {
        if names.speaker_of(head.trim()).is_some() {
            text = strip_quotes(rest);
        }
    }
    let wanted = collapse_whitespace(text);
    let candidates = dialogue.turns.iter().enumerate().filter(|(_, t)| !t.is_image_turn);
    if let Some((i, _)) = candidates.clone().find(|(_, t)| collapse_whitespace(&t.text) == wanted) {
        return Some(i);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in candidates {
        let f = token_f1(&wanted, &t.text);
        if f >= threshold && best.is_none_or(|(_, b)| f > b) {
            best = Some((i, f));
        }
    }
    best.map(|(i, _)| i)
}

/// Reads `<UTTERANCE> | <SPEAKER> | <RATIONALE>` lines. Lines that break
/// the format, cite no dialogue turn, name an unknown speaker, or give a
/// rationale not starting with "To" become warnings.
pub fn parse_moments(
    raw: &str,
    dialogue: &Dialogue,
    names: &SpeakerNames,
    threshold: f64,
) -> (Vec<SharingMoment>, Vec<MomentWarning>) {
    let mut moments: Vec<SharingMoment> = Vec::new();
    let mut warnings = Vec::new();
    for (n, line) in raw.lines().enumerate() {
        let line = strip_numbering(line);
        if line.is_empty() {
            continue;
        }
        let mut warn = |kind, detail: &str| {
            warnings.push(MomentWarning { kind, line: Some(n + 1), detail: detail.to_owned() });
        };
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        let [utterance, speaker, rationale] = fields[..] else {
            warn(WarningKind::BadFormat, line);
            continue;
        };
        if utterance.is_empty() || speaker.is_empty() || rationale.is_empty() {
            warn(WarningKind::BadFormat, line);
            continue;
        }
        let rationale = strip_quotes(rationale);
        if !starts_with_to(rationale) {
            warn(WarningKind::RationalePrefix, rationale);
            continue;
        }
        let Some(turn_index) = match_turn(utterance, dialogue, names, threshold) else {
            warn(WarningKind::UnmatchedUtterance, utterance);
            continue;
        };
        let speaker = strip_quotes(speaker);
        let Some(speaker_id) = names.speaker_of(speaker) else {
            warn(WarningKind::UnknownSpeaker, speaker);
            continue;
        };
        if moments.iter().any(|m| m.turn_index == turn_index) {
            warn(WarningKind::DuplicateMoment, utterance);
            continue;
        }
        moments.push(SharingMoment {
            turn_index,
            speaker: names.get(speaker_id).to_owned(),
            rationale: rationale.to_owned(),
            description: String::new(),
            image: None,
            flag: None,
        });
    }
    moments.sort_by_key(|m| m.turn_index);
    (moments, warnings)
}
