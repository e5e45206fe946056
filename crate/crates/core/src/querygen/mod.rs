//! Atomic query generation.
//!
//! A text-only LLM first extracts taxonomy-typed tuples from the user's
//! question and the model's initial answer, then rewrites each tuple as a
//! positively framed yes/no question. Both steps use an `id | payload` line
//! grammar that is parsed and validated here. Questions that are already
//! atomic and binary skip the LLM entirely.

mod prompts;
mod taxonomy;
mod validate;

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayError, ModelClient, ModelSettings};

pub use prompts::{
    build_question_prompt, build_tuple_prompt, Exemplars, QuestionShot, TupleShot, QUESTION_TASK, TARGET_MARKER,
    TUPLE_TASK,
};
pub use taxonomy::{Category, Subcategory, TaxonomyCategory, TAXONOMY_BLOCK};
pub use validate::{
    classify_passthrough, is_positive_binary, negation_tokens, validate_positive_binary, word_tokens, Violation,
    BINARY_HEADS, NEGATION_LEXICON,
};

#[derive(Debug, Error)]
pub enum QueryGenError {
    #[error("line {line_no}: malformed output line `{line}`")]
    MalformedLine { line_no: usize, line: String },
    #[error("line {line_no}: `{label}` is not in the taxonomy")]
    UnknownCategory { line_no: usize, label: String },
    #[error("question {id} `{text}` failed validation: {violations:?}")]
    ValidationFailure {
        id: u32,
        text: String,
        violations: Vec<Violation>,
    },
    #[error("cannot build a question prompt from an empty tuple list")]
    EmptyTupleList,
    #[error("at least one few-shot exemplar is required")]
    NoExemplars,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AtomicTuple {
    pub id: u32,
    pub category: TaxonomyCategory,
    pub argument: String,
}

const TUPLE_NEGATIONS: &[&str] = &["not", "no"];
const IMAGE_WORDS: &[&str] = &["image", "picture", "photo", "photograph", "the image", "this image"];

fn has_tuple_negation(argument: &str) -> bool {
    word_tokens(argument)
        .iter()
        .any(|t| TUPLE_NEGATIONS.contains(&t.as_str()))
}

impl AtomicTuple {
    /// `None` when the argument is empty or carries a negation word.
    pub fn new(id: u32, category: TaxonomyCategory, argument: impl Into<String>) -> Option<Self> {
        let argument = argument.into().trim().to_string();
        if id == 0 || argument.is_empty() || has_tuple_negation(&argument) {
            return None;
        }
        Some(AtomicTuple { id, category, argument })
    }

    /// `id | category - subcategory (argument)`
    pub fn render(&self) -> String {
        format!("{} | {} ({})", self.id, self.category, self.argument)
    }

    /// A tuple whose argument names the image itself.
    pub fn is_trivial_image_tuple(&self) -> bool {
        IMAGE_WORDS.contains(&self.argument.to_lowercase().as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicQuery {
    pub id: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tuple: Option<AtomicTuple>,
    #[serde(default)]
    pub passthrough: bool,
}

impl AtomicQuery {
    pub fn passthrough(text: impl Into<String>) -> Self {
        AtomicQuery {
            id: 1,
            text: text.into(),
            source_tuple: None,
            passthrough: true,
        }
    }
}

fn is_none_marker(line: &str) -> bool {
    matches!(line.trim().to_lowercase().as_str(), "none." | "none")
}

fn tuple_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(\d+)\s*\|\s*([A-Za-z]+)\s*[-\u{2013}]\s*([A-Za-z][A-Za-z ]*?)\s*\((.*)\)\s*$").unwrap()
    })
}

fn id_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d+)\s*\|\s*(.*?)\s*$").unwrap())
}

/// Remove standalone "not"/"no" words, mirroring the prompt's instruction.
fn strip_tuple_negations(argument: &str) -> String {
    if !has_tuple_negation(argument) {
        return argument.trim().to_string();
    }
    argument
        .split_whitespace()
        .filter(|w| {
            let bare = w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
            !TUPLE_NEGATIONS.contains(&bare.as_str())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Single spaces, and `a, b` around commas.
fn normalize_argument(argument: &str) -> String {
    argument
        .split(',')
        .map(|part| part.split_whitespace().collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Parse tuple-extraction output. `None.` yields no tuples and tuples about
/// the image itself are dropped.
pub fn parse_tuples(llm_output: &str) -> Result<Vec<AtomicTuple>, QueryGenError> {
    let mut tuples = Vec::new();
    for (idx, raw) in llm_output.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || is_none_marker(line) {
            continue;
        }
        let line_no = idx + 1;
        let malformed = || QueryGenError::MalformedLine {
            line_no,
            line: line.to_string(),
        };
        let caps = tuple_line().captures(line).ok_or_else(malformed)?;
        let id: u32 = caps[1].parse().map_err(|_| malformed())?;
        let category =
            TaxonomyCategory::from_labels(&caps[2], &caps[3]).ok_or_else(|| QueryGenError::UnknownCategory {
                line_no,
                label: format!("{} - {}", caps[2].trim(), caps[3].trim()),
            })?;
        let argument = normalize_argument(&strip_tuple_negations(&caps[4]));
        let tuple = AtomicTuple::new(id, category, argument).ok_or_else(malformed)?;
        if tuple.is_trivial_image_tuple() {
            log::debug!("dropping trivial image tuple `{line}`");
            continue;
        }
        tuples.push(tuple);
    }
    Ok(tuples)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedQuestion {
    pub id: u32,
    pub text: String,
    pub violations: Vec<Violation>,
}

/// Questions parsed from one LLM response, split by validation outcome.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionParse {
    pub accepted: Vec<AtomicQuery>,
    pub rejected: Vec<RejectedQuestion>,
}

impl QuestionParse {
    /// Fail on the first rejected question.
    pub fn into_strict(self) -> Result<Vec<AtomicQuery>, QueryGenError> {
        match self.rejected.into_iter().next() {
            Some(r) => Err(QueryGenError::ValidationFailure {
                id: r.id,
                text: r.text,
                violations: r.violations,
            }),
            None => Ok(self.accepted),
        }
    }
}

/// Parse `id | question` lines. Exact-duplicate question texts are kept once.
pub fn parse_questions(llm_output: &str) -> Result<QuestionParse, QueryGenError> {
    let mut parsed = QuestionParse::default();
    let mut seen = HashSet::new();
    for (idx, raw) in llm_output.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || is_none_marker(line) {
            continue;
        }
        let line_no = idx + 1;
        let malformed = || QueryGenError::MalformedLine {
            line_no,
            line: line.to_string(),
        };
        let caps = id_line().captures(line).ok_or_else(malformed)?;
        let id: u32 = caps[1].parse().map_err(|_| malformed())?;
        let text = caps[2].to_string();
        if text.is_empty() {
            return Err(malformed());
        }
        if !seen.insert(text.clone()) {
            continue;
        }
        let violations = validate_positive_binary(&text);
        if violations.is_empty() {
            parsed.accepted.push(AtomicQuery {
                id,
                text,
                source_tuple: None,
                passthrough: false,
            });
        } else {
            parsed.rejected.push(RejectedQuestion { id, text, violations });
        }
    }
    Ok(parsed)
}

fn repair_prompt(question_prompt: &str, rejected: &[RejectedQuestion]) -> String {
    let mut out = question_prompt.to_string();
    out.push_str("\nThe following binary questions violate the requirements:\n");
    for r in rejected {
        let reasons: Vec<String> = r.violations.iter().map(ToString::to_string).collect();
        out.push_str(&format!("{} | {} ({})\n", r.id, r.text, reasons.join("; ")));
    }
    out.push_str(
        "Rewrite only these questions so that they satisfy every requirement.\noutput format: id | question\n",
    );
    out
}

/// Result of query generation for one example.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryGenOutcome {
    pub queries: Vec<AtomicQuery>,
    pub tuples: Vec<AtomicTuple>,
    pub diagnostics: Vec<String>,
    pub llm_calls: usize,
}

pub struct QueryGenerator<'a> {
    gateway: &'a dyn ModelClient,
    llm: &'a ModelSettings,
    exemplars: &'a Exemplars,
}

impl<'a> QueryGenerator<'a> {
    pub fn new(gateway: &'a dyn ModelClient, llm: &'a ModelSettings, exemplars: &'a Exemplars) -> Self {
        QueryGenerator {
            gateway,
            llm,
            exemplars,
        }
    }

    fn ask(&self, prompt: String, outcome: &mut QueryGenOutcome) -> Result<String, QueryGenError> {
        outcome.llm_calls += 1;
        Ok(self.gateway.query(&self.llm.request(prompt))?.text)
    }

    pub fn generate(&self, user_question: &str, initial_answer: &str) -> Result<QueryGenOutcome, QueryGenError> {
        let mut outcome = QueryGenOutcome::default();
        if classify_passthrough(user_question) {
            outcome.queries.push(AtomicQuery::passthrough(user_question.trim()));
            return Ok(outcome);
        }

        let prompt = build_tuple_prompt(user_question, initial_answer, &self.exemplars.tuple_shots)?;
        let tuples = parse_tuples(&self.ask(prompt, &mut outcome)?)?;
        if tuples.is_empty() {
            outcome.diagnostics.push("tuple extraction produced no tuples".into());
            return Ok(outcome);
        }

        let question_prompt = build_question_prompt(&tuples, user_question, &self.exemplars.question_shots)?;
        let mut parsed = parse_questions(&self.ask(question_prompt.clone(), &mut outcome)?)?;

        if !parsed.rejected.is_empty() {
            for r in &parsed.rejected {
                outcome
                    .diagnostics
                    .push(format!("rejected question {} `{}`: {:?}", r.id, r.text, r.violations));
            }
            let repair = repair_prompt(&question_prompt, &parsed.rejected);
            let wanted: HashSet<u32> = parsed.rejected.iter().map(|r| r.id).collect();
            match parse_questions(&self.ask(repair, &mut outcome)?) {
                Ok(repaired) => {
                    for query in repaired.accepted {
                        if wanted.contains(&query.id) && !parsed.accepted.iter().any(|q| q.text == query.text) {
                            outcome
                                .diagnostics
                                .push(format!("repaired question {} as `{}`", query.id, query.text));
                            parsed.accepted.push(query);
                        }
                    }
                    for r in repaired.rejected {
                        outcome.diagnostics.push(format!(
                            "dropped question {} `{}` after repair: {:?}",
                            r.id, r.text, r.violations
                        ));
                    }
                }
                Err(err) => outcome.diagnostics.push(format!("repair output unusable: {err}")),
            }
            let repaired_ids: HashSet<u32> = parsed.accepted.iter().map(|q| q.id).collect();
            for id in wanted.difference(&repaired_ids) {
                outcome.diagnostics.push(format!("question {id} dropped"));
            }
        }

        let mut queries = parsed.accepted;
        queries.sort_by_key(|q| q.id);
        for query in &mut queries {
            query.source_tuple = tuples.iter().find(|t| t.id == query.id).cloned();
        }
        outcome.queries = queries;
        outcome.tuples = tuples;
        Ok(outcome)
    }
}
