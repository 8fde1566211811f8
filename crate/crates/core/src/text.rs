//! Text normalizers shared by indexing, round-trip filtering and scoring.
//!
//! Two families live here:
//!
//! * the *lexical* form used by the BM25 index and the containment check:
//!   lowercase, delete every character that is neither alphanumeric nor
//!   whitespace, split on Unicode whitespace;
//! * the *answer* form used by the QA metrics, which additionally drops the
//!   articles `a`, `an` and `the`.
//!
//! Both delete punctuation rather than replacing it with a space, so
//! `"mother-in-law"` becomes the single token `"motherinlaw"` everywhere.

const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn strip_punct_lower(text: &str) -> String {
    text.chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Lexical tokens: lowercase, punctuation deleted, whitespace split.
pub fn lexical_tokens(text: &str) -> Vec<String> {
    strip_punct_lower(text)
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Lexical tokens joined with single spaces.
pub fn lexical_form(text: &str) -> String {
    lexical_tokens(text).join(" ")
}

/// True when the lexical tokens of `needle` occur as a contiguous run inside
/// the lexical tokens of `haystack`.
///
/// Matching is on token boundaries: `"cat"` is not contained in
/// `"concatenate"`. An empty needle is never contained.
pub fn contains_lexical(haystack: &str, needle: &str) -> bool {
    let needle = lexical_tokens(needle);
    if needle.is_empty() {
        return false;
    }
    let haystack = lexical_tokens(haystack);
    haystack
        .windows(needle.len())
        .any(|w| w == needle.as_slice())
}

/// Answer normalization for QA scoring.
///
/// ```
/// use rag_selftrain::text::normalize_answer;
/// assert_eq!(normalize_answer("The Cat!"), "cat");
/// assert_eq!(normalize_answer("an  apple   pie."), "apple pie");
/// ```
pub fn normalize_answer(text: &str) -> String {
    answer_tokens(text).join(" ")
}

/// Tokens of [`normalize_answer`].
pub fn answer_tokens(text: &str) -> Vec<String> {
    strip_punct_lower(text)
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
        .map(str::to_owned)
        .collect()
}

/// Split passage text into sentences on `.`, `!` and `?`.
pub fn sentences(text: &str) -> impl Iterator<Item = &str> {
    text.split(['.', '!', '?'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_answer("The Cat!"), "cat");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("an  apple   pie."), "apple pie");
    }

    #[test]
    fn lexical_keeps_articles() {
        assert_eq!(lexical_form("The  Cat, sat."), "the cat sat");
        assert!(lexical_tokens("!!! ...").is_empty());
    }

    #[test]
    fn containment_is_token_aligned() {
        assert!(contains_lexical(
            "Energy is stored as Triglycerides.",
            "triglycerides"
        ));
        assert!(contains_lexical(
            "adipose tissue efficiently stores",
            "Adipose  tissue"
        ));
        assert!(!contains_lexical("concatenate", "cat"));
        assert!(!contains_lexical("anything", "  ,. "));
    }

    #[test]
    fn unicode_lowercase() {
        assert_eq!(lexical_form("ÉCOLE Straße"), "école straße");
    }

    #[test]
    fn sentence_split() {
        let s: Vec<_> = sentences("One. Two! Three? ").collect();
        assert_eq!(s, ["One", "Two", "Three"]);
    }
}
