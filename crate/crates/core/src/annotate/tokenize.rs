use serde::{Deserialize, Serialize};

/// A token with its half-open span in *character* offsets of the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn folded(&self) -> String {
        self.text.to_lowercase()
    }

    pub fn is_sentence_end(&self) -> bool {
        matches!(self.text.as_str(), "." | "!" | "?")
    }
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Splits on Unicode whitespace, then peels leading and trailing punctuation
/// off each word into one-character tokens. Case is preserved.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_word(&chars, start, i, &mut tokens);
    }
    tokens
}

fn split_word(chars: &[char], start: usize, end: usize, out: &mut Vec<Token>) {
    let mut lo = start;
    while lo < end && is_punct(chars[lo]) {
        out.push(char_token(chars, lo));
        lo += 1;
    }
    if lo == end {
        return;
    }
    let mut hi = end;
    while hi > lo && is_punct(chars[hi - 1]) {
        hi -= 1;
    }
    out.push(Token {
        text: chars[lo..hi].iter().collect(),
        start: lo,
        end: hi,
    });
    for k in hi..end {
        out.push(char_token(chars, k));
    }
}

fn char_token(chars: &[char], at: usize) -> Token {
    Token {
        text: chars[at].to_string(),
        start: at,
        end: at + 1,
    }
}

/// Tokenizes and case-folds a phrase into its dictionary key.
pub fn fold_phrase(phrase: &str) -> String {
    let normalized = crate::ingest::normalize_text(phrase);
    tokenize(&normalized)
        .iter()
        .map(Token::folded)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses an unsigned numeral such as `12`, `2.5` or `150,000`.
pub fn parse_number(token: &str) -> Option<f64> {
    let cleaned: String = token.chars().filter(|c| *c != ',').collect();
    if cleaned.is_empty()
        || !cleaned.starts_with(|c: char| c.is_ascii_digit())
        || !cleaned.chars().all(|c| c.is_ascii_digit() || c == '.')
        || cleaned.matches('.').count() > 1
    {
        return None;
    }
    cleaned.parse().ok()
}
