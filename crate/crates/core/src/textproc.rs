//! Rule-based tokenization with character-offset spans.
//!
//! Offsets are counted in Unicode scalar values, not bytes, so a span means
//! the same thing regardless of how the source was encoded on the wire.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Inclusive character offset.
    pub start: usize,
    /// Exclusive character offset.
    pub end: usize,
    pub shape: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub source: String,
    pub tokens: Vec<Token>,
    /// Index of the first token of every sentence. Starts with 0 whenever
    /// there is at least one token.
    pub sentence_boundaries: Vec<usize>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("cannot compute the shape of an empty token")]
    Empty,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token index ranges of every sentence, in order.
    pub fn sentences(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.sentence_boundaries.len());
        for (i, &start) in self.sentence_boundaries.iter().enumerate() {
            let end = self
                .sentence_boundaries
                .get(i + 1)
                .copied()
                .unwrap_or(self.tokens.len());
            out.push(start..end);
        }
        out
    }

    /// Sentence number containing token `idx`.
    pub fn sentence_of(&self, idx: usize) -> usize {
        match self.sentence_boundaries.binary_search(&idx) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }

    /// Source slice between two character offsets.
    pub fn slice_chars(&self, start: usize, end: usize) -> String {
        self.source.chars().skip(start).take(end - start).collect()
    }
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

fn is_sentence_final(text: &str) -> bool {
    matches!(text, "." | "!" | "?")
}

/// Split `source` into tokens.
///
/// Whitespace separates chunks; leading and trailing punctuation of each chunk
/// become single-character tokens. Sentences break after `.`, `!` or `?` when
/// the next token follows whitespace and starts with an uppercase letter.
pub fn tokenize(source: &str) -> TokenizedText {
    let chars: Vec<char> = source.chars().collect();
    let mut tokens = Vec::new();
    // whether whitespace precedes token i
    let mut spaced_before = Vec::new();

    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let chunk_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let chunk_end = i;

        let mut lo = chunk_start;
        while lo < chunk_end && is_punct(chars[lo]) {
            lo += 1;
        }
        let mut hi = chunk_end;
        while hi > lo && is_punct(chars[hi - 1]) {
            hi -= 1;
        }

        let mut first = true;
        let mut push = |start: usize, end: usize, tokens: &mut Vec<Token>| {
            let text: String = chars[start..end].iter().collect();
            let shape = shape_of(&text).expect("token text is never empty");
            tokens.push(Token {
                text,
                start,
                end,
                shape,
            });
            spaced_before.push(first && chunk_start > 0);
            first = false;
        };
        for p in chunk_start..lo {
            push(p, p + 1, &mut tokens);
        }
        if lo < hi {
            push(lo, hi, &mut tokens);
        }
        for p in hi.max(lo)..chunk_end {
            push(p, p + 1, &mut tokens);
        }
    }

    let mut sentence_boundaries = Vec::new();
    if !tokens.is_empty() {
        sentence_boundaries.push(0);
    }
    for k in 1..tokens.len() {
        let prev = &tokens[k - 1];
        let starts_upper = tokens[k].text.chars().next().is_some_and(char::is_uppercase);
        if is_sentence_final(&prev.text) && spaced_before[k] && starts_upper {
            sentence_boundaries.push(k);
        }
    }

    TokenizedText {
        source: source.to_string(),
        tokens,
        sentence_boundaries,
    }
}

/// Case/digit pattern of a token: uppercase `X`, lowercase `x`, digit `d`,
/// anything else `-`, with runs capped at two characters.
pub fn shape_of(token_text: &str) -> Result<String, ShapeError> {
    if token_text.is_empty() {
        return Err(ShapeError::Empty);
    }
    let mut out = String::new();
    let mut last = None;
    let mut run = 0;
    for c in token_text.chars() {
        let s = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_numeric() {
            'd'
        } else {
            '-'
        };
        if Some(s) == last {
            run += 1;
        } else {
            last = Some(s);
            run = 1;
        }
        if run <= 2 {
            out.push(s);
        }
    }
    Ok(out)
}

/// Lowercase and collapse internal whitespace; the key used for anchor and
/// gazetteer lookups.
pub fn normalize_phrase(text: &str) -> String {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}
