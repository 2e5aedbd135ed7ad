//! Tokenizers shared by the lexicon and scoring modules.

use std::borrow::Cow;

/// Lowercased alphanumeric runs of at least two characters.
///
/// Used for distinctive-vocabulary counting and by the offline attribute
/// scorer.
pub fn vocab_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    vocab_token_refs(text).map(Cow::into_owned)
}

/// [`vocab_tokens`] without allocating for tokens that are already lowercase.
pub fn vocab_token_refs(text: &str) -> impl Iterator<Item = Cow<'_, str>> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().nth(1).is_some())
        .map(|t| if t.chars().any(char::is_uppercase) { Cow::Owned(t.to_lowercase()) } else { Cow::Borrowed(t) })
}

/// Number of whitespace-separated tokens.
pub fn word_count(text: &str) -> u32 {
    text.split_whitespace().count() as u32
}

/// Byte spans of maximal alphanumeric runs, in order.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}
