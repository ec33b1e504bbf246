use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::literal::{parse_dict, LiteralValue};
use super::refusal::RefusalLexicon;
use crate::data::{Decision, IntentLabel, UnknownIntent};
use crate::text::has_description_prefix;

/// Why a reply could not be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseFailure {
    NoBraces,
    BadJson,
    MissingKey,
    BadDecisionValue,
    UnknownIntent,
    EmptyDescription,
}

impl ParseFailure {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseFailure::NoBraces => "no-braces",
            ParseFailure::BadJson => "bad-json",
            ParseFailure::MissingKey => "missing-key",
            ParseFailure::BadDecisionValue => "bad-decision-value",
            ParseFailure::UnknownIntent => "unknown-intent",
            ParseFailure::EmptyDescription => "empty-description",
        }
    }
}

impl std::fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageOutcome<T> {
    Parsed(T),
    Refusal { raw: String },
    ParseError { raw: String, reason: ParseFailure },
}

impl<T> StageOutcome<T> {
    pub fn parsed(&self) -> Option<&T> {
        match self {
            StageOutcome::Parsed(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_refusal(&self) -> bool {
        matches!(self, StageOutcome::Refusal { .. })
    }
}

/// Parsed decision-stage answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage1Output {
    pub decision: Decision,
    pub intents: BTreeSet<IntentLabel>,
    pub sentence: String,
    #[serde(skip)]
    pub raw: String,
}

/// Parsed description-stage answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionOutput {
    pub description: String,
    #[serde(default)]
    pub salient: Vec<String>,
    pub prefix_ok: bool,
    #[serde(skip)]
    pub raw: String,
}

impl DescriptionOutput {
    pub fn new(description: impl Into<String>, salient: Vec<String>, raw: impl Into<String>) -> Self {
        let description = description.into();
        Self { prefix_ok: has_description_prefix(&description), description, salient, raw: raw.into() }
    }
}

/// Byte range of the first `{` through the last `}` after it.
fn outer_braces(raw: &str) -> Option<(usize, usize)> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then_some((start, end + 1))
}

fn key_form(key: &str) -> String {
    key.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

fn lookup<'a>(pairs: &'a [(String, LiteralValue)], keys: &[&str]) -> Option<&'a LiteralValue> {
    pairs.iter().find(|(k, _)| keys.contains(&key_form(k).as_str())).map(|(_, v)| v)
}

enum Located<'a> {
    Refusal,
    NoBraces,
    Payload(&'a str),
}

/// Refusal is judged on the chatter around the payload so that a quoted
/// sentence inside it cannot trip the lexicon.
fn locate<'a>(raw: &'a str, lexicon: &RefusalLexicon) -> Located<'a> {
    match outer_braces(raw) {
        None if lexicon.matches(raw) => Located::Refusal,
        None => Located::NoBraces,
        Some((s, e)) => {
            let outside = format!("{} {}", &raw[..s], &raw[e..]);
            if lexicon.matches(&outside) {
                Located::Refusal
            } else {
                Located::Payload(&raw[s..e])
            }
        }
    }
}

fn resolve_intent(entry: &str) -> Option<IntentLabel> {
    let s = entry.trim().trim_matches(|c: char| c == '"' || c == '\'' || c == '`').trim();
    let chars: Vec<char> = s.chars().collect();
    let letter = match chars.as_slice() {
        ['(', l, ')', ..] => Some(*l),
        [l] => Some(*l),
        [l, ')' | '.', rest @ ..] if rest.first().is_none_or(|c| c.is_whitespace()) => Some(*l),
        _ => None,
    };
    if let Some(l) = letter {
        return IntentLabel::from_letter(l.to_ascii_lowercase());
    }
    let s = s.trim_end_matches(['.', ',']);
    IntentLabel::from_label(s).or_else(|| s.split_once(':').and_then(|(head, _)| IntentLabel::from_label(head)))
}

/// Resolves option entries by letter, label text, or both.
pub fn parse_intents<S: AsRef<str>>(entries: &[S]) -> Result<BTreeSet<IntentLabel>, UnknownIntent> {
    entries.iter().map(|e| resolve_intent(e.as_ref()).ok_or_else(|| UnknownIntent(e.as_ref().to_owned()))).collect()
}

fn intent_entries(value: &LiteralValue) -> Vec<String> {
    let split = |s: &str| -> Vec<String> {
        s.split([',', ';', '\n']).map(str::trim).filter(|p| !p.is_empty()).map(str::to_owned).collect()
    };
    match value {
        LiteralValue::Str(s) | LiteralValue::Word(s) => {
            let t = s.trim();
            if t.is_empty() || t.eq_ignore_ascii_case("none") {
                Vec::new()
            } else {
                split(t)
            }
        }
        other => other.as_text_list().into_iter().filter(|e| !e.trim().is_empty()).collect(),
    }
}

fn parse_decision(value: &LiteralValue) -> Option<Decision> {
    let text = value.as_text()?;
    let word = text.trim().trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    match word.as_str() {
        "yes" => Some(Decision::Yes),
        "no" => Some(Decision::No),
        _ => None,
    }
}

pub fn parse_stage1(raw: &str) -> StageOutcome<Stage1Output> {
    parse_stage1_with(raw, RefusalLexicon::bundled())
}

pub fn parse_stage1_with(raw: &str, lexicon: &RefusalLexicon) -> StageOutcome<Stage1Output> {
    let fail = |reason| StageOutcome::ParseError { raw: raw.to_owned(), reason };
    let payload = match locate(raw, lexicon) {
        Located::Refusal => return StageOutcome::Refusal { raw: raw.to_owned() },
        Located::NoBraces => return fail(ParseFailure::NoBraces),
        Located::Payload(p) => p,
    };
    let Some(pairs) = parse_dict(payload) else { return fail(ParseFailure::BadJson) };
    let Some(prediction) = lookup(&pairs, &["prediction", "decision"]) else {
        return fail(ParseFailure::MissingKey);
    };
    let Some(decision) = parse_decision(prediction) else { return fail(ParseFailure::BadDecisionValue) };
    let entries = lookup(&pairs, &["intent", "intents"]).map(intent_entries).unwrap_or_default();
    let sentence = lookup(&pairs, &["sentence"]).and_then(LiteralValue::as_text).unwrap_or_default();
    let intents = match decision {
        Decision::No => entries.iter().filter_map(|e| resolve_intent(e)).collect(),
        Decision::Yes => {
            if entries.is_empty() || sentence.trim().is_empty() {
                return fail(ParseFailure::MissingKey);
            }
            match parse_intents(&entries) {
                Ok(set) => set,
                Err(_) => return fail(ParseFailure::UnknownIntent),
            }
        }
    };
    StageOutcome::Parsed(Stage1Output { decision, intents, sentence, raw: raw.to_owned() })
}

pub fn parse_stage2(raw: &str) -> StageOutcome<DescriptionOutput> {
    parse_stage2_with(raw, RefusalLexicon::bundled())
}

pub fn parse_stage2_with(raw: &str, lexicon: &RefusalLexicon) -> StageOutcome<DescriptionOutput> {
    let fail = |reason| StageOutcome::ParseError { raw: raw.to_owned(), reason };
    let payload = match locate(raw, lexicon) {
        Located::Refusal => return StageOutcome::Refusal { raw: raw.to_owned() },
        Located::NoBraces => {
            let bare = raw.trim().trim_matches(|c: char| c == '"' || c == '\'').trim();
            return if has_description_prefix(bare) {
                StageOutcome::Parsed(DescriptionOutput::new(bare, Vec::new(), raw))
            } else {
                fail(ParseFailure::NoBraces)
            };
        }
        Located::Payload(p) => p,
    };
    let Some(pairs) = parse_dict(payload) else { return fail(ParseFailure::BadJson) };
    let Some(value) = lookup(&pairs, &["imagedescription", "description"]) else {
        return fail(ParseFailure::MissingKey);
    };
    let description = value.as_text().unwrap_or_default().trim().to_owned();
    if description.is_empty() {
        return fail(ParseFailure::EmptyDescription);
    }
    let salient = lookup(&pairs, &["salient", "salientinformation", "salientwords"])
        .map(|v| match v {
            LiteralValue::Str(s) | LiteralValue::Word(s) => {
                s.split([',', ';']).map(str::trim).filter(|p| !p.is_empty()).map(str::to_owned).collect()
            }
            other => other.as_text_list(),
        })
        .unwrap_or_default();
    StageOutcome::Parsed(DescriptionOutput::new(description, salient, raw))
}
