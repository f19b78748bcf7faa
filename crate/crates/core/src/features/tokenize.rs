use alloc::string::String;
use alloc::vec::Vec;

/// Placeholder text for a field a stream never reads (the passage of an
/// entailment pair, the question of a story).
pub const EMPTY_SENTINEL: &str = "__empty__";

fn is_punct(c: char) -> bool {
    !(c.is_alphanumeric() || c.is_whitespace() || c == '_')
}

/// Splits on whitespace and peels punctuation off both ends of every chunk,
/// one token per punctuation character. A leading apostrophe stays attached
/// (`'s`), and chunks made only of punctuation are kept whole.
pub fn tokenize_cased(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if chunk.chars().all(is_punct) {
            out.push(String::from(chunk));
            continue;
        }
        let mut rest = chunk;
        while let Some(c) = rest.chars().next() {
            if is_punct(c) && c != '\'' {
                out.push(String::from(c));
                rest = &rest[c.len_utf8()..];
            } else {
                break;
            }
        }
        let mut trailing = Vec::new();
        while let Some(c) = rest.chars().next_back() {
            if is_punct(c) {
                trailing.push(String::from(c));
                rest = &rest[..rest.len() - c.len_utf8()];
            } else {
                break;
            }
        }
        if !rest.is_empty() {
            out.push(String::from(rest));
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

/// Lowercased tokens, used for every lookup.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_cased(text)
        .into_iter()
        .map(|t| t.to_lowercase())
        .collect()
}
