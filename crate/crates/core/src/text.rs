//! Text normalization and the lowercase word tokenizer shared by indexing,
//! reranking and corpus statistics.

/// Collapses every run of whitespace to a single space and trims both ends.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Lowercases, splits on non-alphanumeric characters and drops tokens
/// shorter than two characters. No stemming, no stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|piece| piece.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

/// Whitespace-delimited words, used for prompt-budget clipping.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Keeps at most `max_words` whitespace-delimited words. Clipped text ends
/// with [`CLIP_MARKER`].
pub fn clip_words(text: &str, max_words: usize) -> (String, bool) {
    if word_count(text) <= max_words {
        return (text.to_string(), false);
    }
    let kept: Vec<&str> = text.split_whitespace().take(max_words).collect();
    (format!("{} {}", kept.join(" "), CLIP_MARKER), true)
}

pub const CLIP_MARKER: &str = "[...]";
