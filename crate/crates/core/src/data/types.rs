use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::intent::IntentLabel;
use super::objects::ObjectSet;
use crate::text::{collapse_whitespace, has_description_prefix};

/// Where an image came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageSource {
    Corpus,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub uri: String,
    pub source: ImageSource,
}

impl ImageRef {
    pub fn corpus(id: impl Into<String>, uri: impl Into<String>) -> Self {
        Self { id: id.into(), uri: uri.into(), source: ImageSource::Corpus }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker_id: u8,
    pub text: String,
    #[serde(default)]
    pub is_image_turn: bool,
}

impl Turn {
    pub fn new(speaker_id: u8, text: impl Into<String>) -> Self {
        Self { speaker_id, text: text.into(), is_image_turn: false }
    }

    pub fn image(speaker_id: u8) -> Self {
        Self { speaker_id, text: String::new(), is_image_turn: true }
    }
}

/// A two-party dialogue with an optional designated image-sharing turn.
///
/// A dialogue without `share_turn_index` is a negative instance for the
/// sharing decision: nobody shares an image after its last turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub turns: Vec<Turn>,
    pub share_turn_index: Option<usize>,
    pub gold_image: Option<ImageRef>,
    #[serde(default)]
    pub gold_objects: ObjectSet,
}

/// A violated structural invariant, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldViolation {
    pub field: String,
    pub message: String,
}

impl FieldViolation {
    pub(crate) fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for FieldViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl Dialogue {
    pub fn validate(&self) -> Result<(), FieldViolation> {
        if self.dialogue_id.is_empty() {
            return Err(FieldViolation::new("dialogue_id", "must be nonempty"));
        }
        if self.turns.is_empty() {
            return Err(FieldViolation::new("turns", "must be nonempty"));
        }
        if let Some(t) = self.share_turn_index {
            if t >= self.turns.len() {
                return Err(FieldViolation::new(
                    "share_turn_index",
                    format!("{t} out of range for {} turns", self.turns.len()),
                ));
            }
        }
        let mut image_turns = 0;
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.speaker_id > 1 {
                return Err(FieldViolation::new(
                    format!("turns[{i}].speaker_id"),
                    format!("must be 0 or 1, got {}", turn.speaker_id),
                ));
            }
            if turn.is_image_turn {
                image_turns += 1;
            } else if turn.text.trim().is_empty() {
                return Err(FieldViolation::new(format!("turns[{i}].text"), "must be nonempty"));
            }
        }
        if image_turns > 1 {
            return Err(FieldViolation::new("turns", "more than one image turn"));
        }
        Ok(())
    }

    /// The speaker of the gold share turn.
    pub fn share_speaker(&self) -> Option<u8> {
        self.share_turn_index.map(|t| self.turns[t].speaker_id)
    }

    /// Whether the gold decision for this instance is "yes".
    pub fn gold_decision(&self) -> Decision {
        if self.share_turn_index.is_some() {
            Decision::Yes
        } else {
            Decision::No
        }
    }

    /// Number of turns in the dialogue (`N`).
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

/// Binary image-sharing decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Yes,
    No,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Yes => "yes",
            Decision::No => "no",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One annotator's labels for the sharing moment of one dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub dialogue_id: String,
    pub annotator_id: String,
    pub intents: BTreeSet<IntentLabel>,
    pub trigger_sentence: String,
    pub image_description: String,
    #[serde(default)]
    pub salient_spans: Vec<String>,
}

impl AnnotationRecord {
    pub fn has_valid_prefix(&self) -> bool {
        has_description_prefix(&self.image_description)
    }

    /// True when the trigger sentence occurs, whitespace-normalized, inside
    /// one of the turns before the share turn.
    pub fn trigger_in(&self, dialogue: &Dialogue) -> bool {
        let needle = collapse_whitespace(&self.trigger_sentence);
        if needle.is_empty() {
            return false;
        }
        let end = dialogue.share_turn_index.unwrap_or(dialogue.turns.len());
        dialogue.turns[..end].iter().any(|t| collapse_whitespace(&t.text).contains(&needle))
    }
}
