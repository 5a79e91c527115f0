//! Tokenization shared by the mock teacher, the idf mask, the featurizer
//! and the retriever: whitespace split, lowercase, punctuation stripped.

/// Normalizes one raw token. Returns an empty string when nothing but
/// punctuation remains.
pub fn normalize_token(raw: &str) -> String {
    raw.chars()
        .filter(|c| !c.is_ascii_punctuation() && !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(normalize_token)
        .filter(|t| !t.is_empty())
        .collect()
}
