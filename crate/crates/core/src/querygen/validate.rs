//! Word-level checks that a question is a positively framed, self-contained
//! binary question.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const NEGATION_LEXICON: &[&str] = &[
    "no", "not", "n't", "none", "never", "nothing", "neither", "nor", "without",
];

pub const BINARY_HEADS: &[&str] = &[
    "is", "are", "does", "do", "can", "has", "have", "was", "were", "did", "will",
];

const CROSS_REFERENCES: &[&str] = &[
    "previous question",
    "question above",
    "above question",
    "earlier question",
    "last question",
    "other question",
    "same question",
    "preceding question",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "rule", content = "detail", rename_all = "snake_case")]
pub enum Violation {
    Empty,
    MissingQuestionMark,
    /// A negation token, as it appeared in the question.
    Negation(String),
    /// The leading word is not an auxiliary or copula.
    NonBinaryHead(String),
    CrossReference(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => f.write_str("empty question"),
            Violation::MissingQuestionMark => f.write_str("does not end with '?'"),
            Violation::Negation(token) => write!(f, "negation `{token}`"),
            Violation::NonBinaryHead(head) => write!(f, "non-binary head `{head}`"),
            Violation::CrossReference(phrase) => write!(f, "refers to another question (`{phrase}`)"),
        }
    }
}

/// Lowercased word tokens with apostrophes kept inside words and curly
/// apostrophes folded to ASCII.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.replace(['\u{2019}', '\u{2018}'], "'")
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\'').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// The negation carried by a single token, if any.
fn negation_in(token: &str) -> Option<&'static str> {
    if token.ends_with("n't") || token == "cannot" {
        return Some("n't");
    }
    NEGATION_LEXICON.iter().copied().find(|neg| *neg == token)
}

pub fn negation_tokens(text: &str) -> Vec<String> {
    word_tokens(text)
        .into_iter()
        .filter(|t| negation_in(t).is_some())
        .collect()
}

/// Strip a contracted negation so `isn't` yields the head `is`.
fn head_word(token: &str) -> &str {
    match token {
        "can't" | "cannot" => "can",
        "won't" => "will",
        _ => token.strip_suffix("n't").unwrap_or(token),
    }
}

/// Every rule the question breaks; empty when the question passes.
pub fn validate_positive_binary(question: &str) -> Vec<Violation> {
    let trimmed = question.trim();
    if trimmed.is_empty() {
        return vec![Violation::Empty];
    }
    let mut violations = Vec::new();
    if !trimmed.ends_with('?') {
        violations.push(Violation::MissingQuestionMark);
    }
    let tokens = word_tokens(trimmed);
    for token in &tokens {
        if negation_in(token).is_some() {
            violations.push(Violation::Negation(token.clone()));
        }
    }
    match tokens.first() {
        Some(first) if BINARY_HEADS.contains(&head_word(first)) => {}
        Some(first) => violations.push(Violation::NonBinaryHead(first.clone())),
        None => violations.push(Violation::Empty),
    }
    let lowered = trimmed.to_lowercase();
    for phrase in CROSS_REFERENCES {
        if lowered.contains(phrase) {
            violations.push(Violation::CrossReference(phrase.to_string()));
        }
    }
    violations
}

pub fn is_positive_binary(question: &str) -> bool {
    validate_positive_binary(question).is_empty()
}

/// True when the question is a valid positive binary question with a single
/// interrogative predicate, i.e. it can serve as its own atomic query.
pub fn classify_passthrough(question: &str) -> bool {
    if !is_positive_binary(question) {
        return false;
    }
    let tokens = word_tokens(question);
    // a coordinator immediately followed by a second auxiliary head starts a
    // second predicate: "... red and is it parked ..."
    !tokens
        .windows(2)
        .skip(1)
        .any(|pair| matches!(pair[0].as_str(), "and" | "or" | "but") && BINARY_HEADS.contains(&head_word(&pair[1])))
        && !question.trim().trim_end_matches('?').contains('?')
}
