//! Word-level tokenization and gazetteer mention finding.
//!
//! Mentions are found by greedy longest match against the surface index of a
//! [`KgStore`]: at each token position the longest window (up to `max_span`
//! tokens) whose normalized form is an indexed label or alias becomes a
//! mention, and scanning resumes after it.

use serde::{Deserialize, Serialize};

use crate::kg::{normalize_tokens, KgStore};

pub const DEFAULT_MAX_SPAN: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub source_text: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionSpan {
    /// First token of the mention.
    pub start: usize,
    /// One past the last token.
    pub end: usize,
    /// Normalized surface that hit the index.
    pub surface: String,
    /// Matching entity ids, ascending.
    pub candidate_ids: Vec<String>,
}

impl MentionSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

pub(crate) fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

pub(crate) fn is_punct_token(token: &str) -> bool {
    token.chars().all(is_punct)
}

/// Splits on whitespace and emits every punctuation character (anything that
/// is neither alphanumeric nor whitespace) as its own token.
pub fn tokenize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if is_punct(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenSequence {
        tokens,
        source_text: text.to_owned(),
    }
}

/// Greedy left-to-right longest match.
///
/// Windows that begin or end on a punctuation token are never considered, so
/// a trailing full stop is not swallowed into an entity such as `Apple Inc.`
/// (whose normalized surface already drops surrounding punctuation).
pub fn find_mentions(tokens: &TokenSequence, store: &KgStore, max_span: usize) -> Vec<MentionSpan> {
    let max_span = max_span.max(1);
    let toks = &tokens.tokens;
    let mut mentions = Vec::new();
    let mut start = 0;
    while start < toks.len() {
        if is_punct_token(&toks[start]) {
            start += 1;
            continue;
        }
        let longest = (start + 1..=(start + max_span).min(toks.len()))
            .rev()
            .filter(|&end| !is_punct_token(&toks[end - 1]))
            .find_map(|end| {
                let surface = normalize_tokens(&toks[start..end]);
                let ids = store.ids_for_normalized(&surface)?;
                Some(MentionSpan {
                    start,
                    end,
                    surface,
                    candidate_ids: ids.to_vec(),
                })
            });
        match longest {
            Some(m) => {
                start = m.end;
                mentions.push(m);
            }
            None => start += 1,
        }
    }
    mentions
}
