use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::data::{ObjectCategory, ObjectSet};
use crate::llm::{Gateway, GenConfig};
use crate::pipeline::{parse_dict, RefusalLexicon};
use crate::prompt::build_object_extraction_prompt;
use crate::text::word_tokens;

const SYNONYMS: &str = include_str!("../../resources/object_synonyms.txt");

/// Token phrases mapped to categories, longest phrases first.
fn phrase_table() -> &'static [(Vec<String>, ObjectCategory)] {
    static TABLE: OnceLock<Vec<(Vec<String>, ObjectCategory)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table: Vec<(Vec<String>, ObjectCategory)> =
            ObjectCategory::all().map(|c| (word_tokens(c.name()), c)).collect();
        for line in crate::text::resource_lines(SYNONYMS) {
            let Some((head, rest)) = line.split_once(':') else { continue };
            let Some(category) = ObjectCategory::canonicalize(head) else { continue };
            table.extend(rest.split(',').map(|s| (word_tokens(s), category)).filter(|(t, _)| !t.is_empty()));
        }
        table.sort_by_key(|e| std::cmp::Reverse(e.0.len()));
        table
    })
}

/// Whole-word matching of category names and bundled synonyms, taking the
/// longest phrase at each position so that "hot dog" is not an animal.
pub fn lexical_objects(description: &str) -> ObjectSet {
    let tokens = word_tokens(description);
    let mut found = ObjectSet::new();
    let mut i = 0;
    while i < tokens.len() {
        let hit = phrase_table().iter().find(|(phrase, _)| tokens[i..].starts_with(phrase));
        match hit {
            Some((phrase, category)) => {
                found.insert(*category);
                i += phrase.len();
            }
            None => i += 1,
        }
    }
    found
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectExtraction {
    pub objects: ObjectSet,
    pub fallback_used: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

/// Reads a `{category: object}` reply. Unknown categories are dropped;
/// `None` when there is no readable payload.
pub fn parse_object_reply(raw: &str) -> Option<ObjectSet> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    if end < start || RefusalLexicon::bundled().matches(&raw[..start]) {
        return None;
    }
    let pairs = parse_dict(&raw[start..=end])?;
    Some(pairs.iter().filter_map(|(k, _)| ObjectCategory::canonicalize(k)).collect())
}

/// Asks the model for objects when a gateway is given, falling back to
/// lexical matching when there is none or its reply is unusable.
pub fn extract_objects(description: &str, gateway: Option<(&Gateway, &GenConfig)>) -> ObjectExtraction {
    let fallback =
        |raw: Option<String>| ObjectExtraction { objects: lexical_objects(description), fallback_used: true, raw };
    let Some((gateway, cfg)) = gateway else { return fallback(None) };
    let Ok(prompt) = build_object_extraction_prompt(description) else { return fallback(None) };
    match gateway.complete(&prompt, cfg) {
        Ok(res) => match parse_object_reply(&res.text) {
            Some(objects) => ObjectExtraction { objects, fallback_used: false, raw: Some(res.text) },
            None => fallback(Some(res.text)),
        },
        Err(_) => fallback(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::object_set;
    use crate::llm::{default_config, Stage, StubFallback};

    #[test]
    fn lexical_examples() {
        assert_eq!(lexical_objects("An image of a chocolate cake and coffee"), object_set(["Cake", "Coffee"]).unwrap());
        assert!(lexical_objects("An image of a sunset").is_empty());
        assert_eq!(
            lexical_objects("A photo of a hot dog with French fries."),
            object_set(["Hot dog", "French fries"]).unwrap()
        );
        assert_eq!(lexical_objects("A photo of my dogs and a teapot"), object_set(["Animal", "Teapot"]).unwrap());
        assert_eq!(lexical_objects("teacup"), ObjectSet::new());
    }

    #[test]
    fn llm_extraction_and_fallback() {
        let gw = Gateway::default();
        gw.register_stub("obj", [], StubFallback::Respond(r#"{"Cake": "chocolate cake", "Spaceship": "x"}"#.into()))
            .unwrap();
        let cfg = default_config(Stage::ObjectExtract).with_backend("obj");
        let out = extract_objects("An image of a chocolate cake", Some((&gw, &cfg)));
        assert_eq!(out.objects, object_set(["Cake"]).unwrap());
        assert!(!out.fallback_used);

        let gw = Gateway::default();
        gw.register_stub("obj", [], StubFallback::Respond("no idea".into())).unwrap();
        let out = extract_objects("An image of coffee", Some((&gw, &cfg)));
        assert!(out.fallback_used);
        assert_eq!(out.objects, object_set(["Coffee"]).unwrap());

        let out = extract_objects("An image of coffee", None);
        assert!(out.fallback_used && out.raw.is_none());
    }
}
