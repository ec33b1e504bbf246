use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The six-way taxonomy of reasons for sharing an image. Declaration order
/// is the option order `(a)`..`(f)` used in the decision prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IntentLabel {
    InformationDissemination,
    SocialBonding,
    HumorAndEntertainment,
    VisualClarification,
    TopicTransition,
    ExpressionOfEmotionOrOpinion,
}

impl IntentLabel {
    pub const ALL: [IntentLabel; 6] = [
        IntentLabel::InformationDissemination,
        IntentLabel::SocialBonding,
        IntentLabel::HumorAndEntertainment,
        IntentLabel::VisualClarification,
        IntentLabel::TopicTransition,
        IntentLabel::ExpressionOfEmotionOrOpinion,
    ];

    /// Human-readable label as it appears in prompts and annotation files.
    pub fn label(self) -> &'static str {
        match self {
            IntentLabel::InformationDissemination => "Information Dissemination",
            IntentLabel::SocialBonding => "Social Bonding",
            IntentLabel::HumorAndEntertainment => "Humor and Entertainment",
            IntentLabel::VisualClarification => "Visual Clarification",
            IntentLabel::TopicTransition => "Topic Transition",
            IntentLabel::ExpressionOfEmotionOrOpinion => "Expression of Emotion or Opinion",
        }
    }

    pub fn letter(self) -> char {
        (b'a' + self as u8) as char
    }

    pub fn from_letter(letter: char) -> Option<Self> {
        let idx = (letter.to_ascii_lowercase() as u32).checked_sub('a' as u32)?;
        Self::ALL.get(idx as usize).copied()
    }

    /// Case-insensitive match on the label text, ignoring trailing
    /// punctuation and repeated whitespace.
    pub fn from_label(text: &str) -> Option<Self> {
        let wanted =
            crate::text::collapse_whitespace(text.trim_end_matches(|c: char| c.is_ascii_punctuation())).to_lowercase();
        Self::ALL.into_iter().find(|l| l.label().to_lowercase() == wanted)
    }

    /// The option line, e.g. `(b) Social Bonding`.
    pub fn option_line(self) -> String {
        format!("({}) {}", self.letter(), self.label())
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown intent label `{0}`")]
pub struct UnknownIntent(pub String);

impl FromStr for IntentLabel {
    type Err = UnknownIntent;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IntentLabel::from_label(s).ok_or_else(|| UnknownIntent(s.to_owned()))
    }
}

impl Serialize for IntentLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for IntentLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letters_are_a_through_f_in_order() {
        let letters: String = IntentLabel::ALL.iter().map(|l| l.letter()).collect();
        assert_eq!(letters, "abcdef");
    }

    #[test]
    fn label_letter_bijection() {
        for label in IntentLabel::ALL {
            assert_eq!(IntentLabel::from_letter(label.letter()), Some(label));
            assert_eq!(IntentLabel::from_label(label.label()), Some(label));
            assert_eq!(IntentLabel::from_label(&label.label().to_uppercase()), Some(label));
        }
        assert_eq!(IntentLabel::from_letter('g'), None);
        assert_eq!(IntentLabel::from_letter('1'), None);
    }

    #[test]
    fn option_line_format() {
        assert_eq!(IntentLabel::ExpressionOfEmotionOrOpinion.option_line(), "(f) Expression of Emotion or Opinion");
    }

    #[test]
    fn serde_uses_label_text() {
        let json = serde_json::to_string(&IntentLabel::SocialBonding).unwrap();
        assert_eq!(json, "\"Social Bonding\"");
        let back: IntentLabel = serde_json::from_str("\"visual clarification\"").unwrap();
        assert_eq!(back, IntentLabel::VisualClarification);
        assert!(serde_json::from_str::<IntentLabel>("\"Mystery\"").is_err());
    }
}
