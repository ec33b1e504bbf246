//! Small text utilities shared by the loaders, parsers and metrics.

/// Prefixes an image description must start with.
pub const DESCRIPTION_PREFIXES: [&str; 2] = ["An image of", "A photo of"];

/// Collapses every run of whitespace into a single space and trims the ends.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when `description` (ignoring leading whitespace) starts with one of
/// [`DESCRIPTION_PREFIXES`].
pub fn has_description_prefix(description: &str) -> bool {
    let trimmed = description.trim_start();
    DESCRIPTION_PREFIXES.iter().any(|p| trimmed.starts_with(p))
}

fn is_stripped_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c, '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2026}' | '\u{2013}' | '\u{2014}')
}

/// Extractive-QA answer normalization: lowercase, drop punctuation, drop the
/// articles `a`/`an`/`the`, split on whitespace.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let lowered: String = text.to_lowercase().chars().filter(|c| !is_stripped_punctuation(*c)).collect();
    lowered.split_whitespace().filter(|t| !matches!(*t, "a" | "an" | "the")).map(str::to_owned).collect()
}

/// Lowercased word tokens with surrounding punctuation trimmed; inner
/// hyphens and apostrophes survive (`follow-up`, `person's`).
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase().replace('\u{2019}', "'"))
        .filter(|w| !w.is_empty())
        .collect()
}

/// Reads a bundled list resource: one entry per line, `#` comments and blank
/// lines ignored.
pub(crate) fn resource_lines(src: &str) -> impl Iterator<Item = &str> {
    src.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapse() {
        assert_eq!(collapse_whitespace("  a \t b\n\nc "), "a b c");
    }

    #[test]
    fn prefix_rule() {
        assert!(has_description_prefix("An image of a cat"));
        assert!(has_description_prefix("  A photo of two dogs"));
        assert!(!has_description_prefix("a dog at the park"));
        assert!(!has_description_prefix("An illustration of a cat"));
    }

    #[test]
    fn normalization_drops_articles_and_punctuation() {
        assert_eq!(normalize_tokens("An image of a red cat!"), vec!["image", "of", "red", "cat"]);
        assert_eq!(normalize_tokens("The THE, the."), Vec::<String>::new());
        assert_eq!(normalize_tokens("don't"), vec!["dont"]);
    }

    #[test]
    fn word_tokens_keep_inner_marks() {
        assert_eq!(
            word_tokens("To ask a follow-up question about person's cat."),
            vec!["to", "ask", "a", "follow-up", "question", "about", "person's", "cat"]
        );
    }
}
