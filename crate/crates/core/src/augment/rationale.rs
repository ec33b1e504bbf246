use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::moments::starts_with_to;
use crate::text::{resource_lines, word_tokens};

const SKIP_WORDS: &str = include_str!("../../resources/rationale_skip_words.txt");
const DITRANSITIVE: &str = include_str!("../../resources/ditransitive_verbs.txt");

/// Word lists driving the verb/object heuristic.
#[derive(Debug, Clone)]
pub struct RationaleLexicon {
    skip: HashSet<String>,
    ditransitive: HashSet<String>,
}

impl RationaleLexicon {
    pub fn new(skip: impl IntoIterator<Item = String>, ditransitive: impl IntoIterator<Item = String>) -> Self {
        Self {
            skip: skip.into_iter().map(|w| w.to_lowercase()).collect(),
            ditransitive: ditransitive.into_iter().map(|w| w.to_lowercase()).collect(),
        }
    }

    pub fn bundled() -> &'static RationaleLexicon {
        static LEX: OnceLock<RationaleLexicon> = OnceLock::new();
        LEX.get_or_init(|| {
            RationaleLexicon::new(
                resource_lines(SKIP_WORDS).map(str::to_owned),
                resource_lines(DITRANSITIVE).map(str::to_owned),
            )
        })
    }

    fn skips(&self, token: &str) -> bool {
        self.skip.contains(token) || token.ends_with("'s")
    }

    /// `(verb, object)` of a rationale starting with "To", if it has both.
    pub fn verb_object(&self, rationale: &str) -> Option<(String, String)> {
        if !starts_with_to(rationale) {
            return None;
        }
        let tokens = word_tokens(rationale);
        let verb = tokens.get(1)?.clone();
        let first = (2..tokens.len()).find(|&i| !self.skips(&tokens[i]))?;
        // "give person the opportunity": the thing given is the object.
        if self.ditransitive.contains(&verb) && tokens.get(first + 1).is_some_and(|t| self.skips(t)) {
            if let Some(second) = (first + 1..tokens.len()).find(|&i| !self.skips(&tokens[i])) {
                return Some((verb, tokens[second].clone()));
            }
        }
        Some((verb, tokens[first].clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbObjectCount {
    pub verb: String,
    pub object: String,
    pub count: usize,
    /// First rationale seen with this pair.
    pub example: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleAnalysis {
    /// Sorted by count descending, then verb and object.
    pub pairs: Vec<VerbObjectCount>,
    /// Rationales without a "To <verb> <object>" reading.
    pub skipped: usize,
}

pub fn analyze_rationales<S: AsRef<str>>(rationales: &[S]) -> RationaleAnalysis {
    analyze_rationales_with(rationales, RationaleLexicon::bundled())
}

pub fn analyze_rationales_with<S: AsRef<str>>(rationales: &[S], lexicon: &RationaleLexicon) -> RationaleAnalysis {
    let mut counts: BTreeMap<(String, String), (usize, String)> = BTreeMap::new();
    let mut skipped = 0;
    for r in rationales {
        let r = r.as_ref().trim();
        match lexicon.verb_object(r) {
            Some(pair) => counts.entry(pair).or_insert_with(|| (0, r.to_owned())).0 += 1,
            None => skipped += 1,
        }
    }
    let mut pairs: Vec<VerbObjectCount> = counts
        .into_iter()
        .map(|((verb, object), (count, example))| VerbObjectCount { verb, object, count, example })
        .collect();
    pairs.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| (&a.verb, &a.object).cmp(&(&b.verb, &b.object))));
    RationaleAnalysis { pairs, skipped }
}
