//! The toolkit tokenizer.
//!
//! Text is split on Unicode whitespace; each piece is lowercased and stripped
//! of leading/trailing punctuation. Pieces made only of punctuation are kept
//! as-is (lowercased) so that the number of terms always equals the number of
//! whitespace-separated pieces. Context budgets are counted in these terms.

/// Normalized terms of `text`, one per whitespace-separated piece.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(normalize_piece).collect()
}

/// Number of toolkit tokens in `text`.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

fn normalize_piece(piece: &str) -> String {
    let lower = piece.to_lowercase();
    let trimmed = lower.trim_matches(is_punct);
    if trimmed.is_empty() {
        lower
    } else {
        trimmed.to_string()
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '«' | '»' | '…' | '–' | '—' | '¿' | '¡')
}
