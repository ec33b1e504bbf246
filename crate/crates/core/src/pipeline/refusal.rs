use std::path::Path;
use std::sync::OnceLock;

const BUNDLED_LEXICON: &str = include_str!("../../resources/refusal_lexicon.txt");

/// Case-insensitive substring patterns that mark a model refusal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefusalLexicon {
    patterns: Vec<String>,
}

fn fold(text: &str) -> String {
    text.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'")
}

impl RefusalLexicon {
    pub fn new(patterns: impl IntoIterator<Item = String>) -> Self {
        Self { patterns: patterns.into_iter().map(|p| fold(p.trim())).filter(|p| !p.is_empty()).collect() }
    }

    pub fn bundled() -> &'static RefusalLexicon {
        static LEXICON: OnceLock<RefusalLexicon> = OnceLock::new();
        LEXICON.get_or_init(|| RefusalLexicon::new(crate::text::resource_lines(BUNDLED_LEXICON).map(str::to_owned)))
    }

    /// One pattern per line; `#` starts a comment line.
    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Ok(Self::new(crate::text::resource_lines(&src).map(str::to_owned)))
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn matches(&self, text: &str) -> bool {
        let folded = fold(text);
        self.patterns.iter().any(|p| folded.contains(p.as_str()))
    }
}

/// True when `raw` contains any pattern of the bundled refusal lexicon.
pub fn detect_refusal(raw: &str) -> bool {
    RefusalLexicon::bundled().matches(raw)
}
