use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::PromptError;

/// Identifies a bundled template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Stage1,
    Stage2,
    Stage2Salient,
    Augment,
    AugmentDescribe,
    ObjectExtract,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::Stage1,
        TemplateId::Stage2,
        TemplateId::Stage2Salient,
        TemplateId::Augment,
        TemplateId::AugmentDescribe,
        TemplateId::ObjectExtract,
    ];

    /// Versioned resource name of the template file.
    pub fn resource_name(self) -> &'static str {
        match self {
            TemplateId::Stage1 => "stage1.v1",
            TemplateId::Stage2 => "stage2.v1",
            TemplateId::Stage2Salient => "stage2_salient.v1",
            TemplateId::Augment => "augment.v1",
            TemplateId::AugmentDescribe => "augment_describe.v1",
            TemplateId::ObjectExtract => "object_extract.v1",
        }
    }

    fn source(self) -> &'static str {
        let raw = match self {
            TemplateId::Stage1 => include_str!("../../resources/templates/stage1.v1.txt"),
            TemplateId::Stage2 => include_str!("../../resources/templates/stage2.v1.txt"),
            TemplateId::Stage2Salient => {
                include_str!("../../resources/templates/stage2_salient.v1.txt")
            }
            TemplateId::Augment => include_str!("../../resources/templates/augment.v1.txt"),
            TemplateId::AugmentDescribe => {
                include_str!("../../resources/templates/augment_describe.v1.txt")
            }
            TemplateId::ObjectExtract => {
                include_str!("../../resources/templates/object_extract.v1.txt")
            }
        };
        raw.strip_suffix('\n').unwrap_or(raw)
    }

    pub fn template(self) -> Template {
        Template::parse(self.source())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

/// A text template with `{name}` placeholders. Any brace not enclosing a
/// lowercase identifier is literal text.
#[derive(Debug, Clone)]
pub struct Template {
    segments: Vec<Segment>,
}

fn placeholder_at(s: &str) -> Option<&str> {
    let rest = s.strip_prefix('{')?;
    let end = rest.find('}')?;
    let name = &rest[..end];
    let valid = !name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
    valid.then_some(name)
}

impl Template {
    pub fn parse(src: &str) -> Self {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = src;
        while let Some(pos) = rest.find('{') {
            literal.push_str(&rest[..pos]);
            rest = &rest[pos..];
            match placeholder_at(rest) {
                Some(name) => {
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Placeholder(name.to_owned()));
                    rest = &rest[name.len() + 2..];
                }
                None => {
                    literal.push('{');
                    rest = &rest[1..];
                }
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Self { segments }
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Placeholder(p) => Some(p.as_str()),
            Segment::Literal(_) => None,
        })
    }

    /// Substitutes every placeholder in one pass; substituted values are
    /// never rescanned.
    pub fn render(&self, values: &HashMap<&str, &str>) -> Result<String, PromptError> {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(l) => out.push_str(l),
                Segment::Placeholder(p) => {
                    out.push_str(values.get(p.as_str()).ok_or_else(|| PromptError::MissingValue(p.clone()))?)
                }
            }
        }
        Ok(out)
    }
}

const BRACKET_MARKERS: [&str; 5] = ["[dialogue]", "[speaker1]", "[speaker2]", "[share_speaker]", "[description]"];

/// Whether `text` still contains a placeholder marker of any bundled
/// template, in either `{name}` or `[name]` form.
pub fn has_unresolved_placeholders(text: &str) -> bool {
    if BRACKET_MARKERS.iter().any(|m| text.contains(m)) {
        return true;
    }
    TemplateId::ALL.iter().any(|id| id.template().placeholders().any(|p| text.contains(&format!("{{{p}}}"))))
}
