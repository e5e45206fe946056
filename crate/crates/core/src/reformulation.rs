//! Paraphrase generation for atomic queries.
//!
//! Each atomic query is rewritten `n` ways by the helper LLM. The numbered-list
//! response is parsed, deduplicated, and checked so that every paraphrase is
//! still a positive binary question that mentions the same entities.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayError, ModelClient, ModelSettings};
use crate::prompt::{escape_fenced, fenced_block_after, unescape_fenced, FENCE};
use crate::querygen::{validate_positive_binary, AtomicQuery, Violation};

pub const DEFAULT_PARAPHRASES: usize = 10;

const QUESTION_MARKER: &str = "Input question:";

#[derive(Debug, Error)]
pub enum ReformulationError {
    #[error("expected {expected} paraphrases, only {} usable", valid.len())]
    TooFewParaphrases { expected: usize, valid: Vec<String> },
    #[error("response contains no numbered list")]
    NoNumberedList,
    #[error("expected_n must be at least 1")]
    ZeroRequested,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseSet {
    pub source: AtomicQuery,
    pub paraphrases: Vec<String>,
    /// Requested count.
    pub n: usize,
}

pub fn build_paraphrase_prompt(question: &str, n: usize) -> String {
    format!(
        "Paraphrase the following question about an image maintaining the exact same meaning. \
You must keep the entity names in the paraphrased questions the same as in the input question \
to prevent any ambiguity. Ensure each generated question is easily understandable and can be \
answered with \"yes\" or \"no.\" Generate {n} distinct paraphrased versions of the question.\n\
\n\
{QUESTION_MARKER}\n\
{FENCE}\n\
{}\n\
{FENCE}\n\
\n\
Directly provide your paraphrased questions in a numbered list without any explanations.",
        escape_fenced(question)
    )
}

/// Recover the question embedded in a paraphrase prompt.
pub fn extract_prompt_question(prompt: &str) -> Option<String> {
    fenced_block_after(prompt, QUESTION_MARKER).map(unescape_fenced)
}

fn numbered_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+)\s*[.)]\s+(.+?)\s*$").unwrap())
}

/// Case- and punctuation-insensitive form used for duplicate detection.
pub fn normalize_for_dedup(text: &str) -> String {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn clean_item(item: &str) -> String {
    let item = item.trim();
    let item = item.trim_matches('*').trim();
    let item = item.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(item);
    item.trim().to_string()
}

pub fn render_numbered_list(items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, item)| format!("{}. {item}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Extract up to `expected_n` distinct, positive-binary paraphrases from a
/// numbered list (`1.` or `1)`); lines that are not list items are ignored.
pub fn parse_paraphrases(llm_output: &str, expected_n: usize) -> Result<Vec<String>, ReformulationError> {
    if expected_n == 0 {
        return Err(ReformulationError::ZeroRequested);
    }
    let mut items = Vec::new();
    for line in llm_output.lines() {
        if let Some(caps) = numbered_line().captures(line) {
            items.push(clean_item(&caps[2]));
        }
    }
    if items.is_empty() {
        return Err(ReformulationError::NoNumberedList);
    }
    let mut seen = HashSet::new();
    let mut valid = Vec::new();
    for item in items {
        if item.is_empty() || !validate_positive_binary(&item).is_empty() {
            log::debug!("discarding paraphrase `{item}`");
            continue;
        }
        if seen.insert(normalize_for_dedup(&item)) {
            valid.push(item);
        }
        if valid.len() == expected_n {
            break;
        }
    }
    if valid.len() < expected_n {
        return Err(ReformulationError::TooFewParaphrases {
            expected: expected_n,
            valid,
        });
    }
    Ok(valid)
}

const STOPWORDS: &[&str] = &[
    "a",
    "an",
    "the",
    "this",
    "that",
    "these",
    "those",
    "there",
    "here",
    "it",
    "its",
    "they",
    "them",
    "their",
    "he",
    "she",
    "his",
    "her",
    "him",
    "you",
    "your",
    "we",
    "our",
    "i",
    "me",
    "my",
    "one",
    "is",
    "are",
    "was",
    "were",
    "be",
    "been",
    "being",
    "am",
    "does",
    "do",
    "did",
    "done",
    "can",
    "could",
    "has",
    "have",
    "had",
    "will",
    "would",
    "should",
    "shall",
    "may",
    "might",
    "must",
    "of",
    "in",
    "on",
    "at",
    "to",
    "for",
    "with",
    "by",
    "from",
    "into",
    "onto",
    "over",
    "under",
    "near",
    "next",
    "behind",
    "above",
    "below",
    "beside",
    "between",
    "inside",
    "outside",
    "up",
    "down",
    "out",
    "off",
    "about",
    "around",
    "through",
    "across",
    "along",
    "against",
    "among",
    "and",
    "or",
    "but",
    "if",
    "than",
    "then",
    "as",
    "so",
    "any",
    "some",
    "all",
    "each",
    "every",
    "other",
    "another",
    "same",
    "such",
    "very",
    "more",
    "most",
    "what",
    "which",
    "who",
    "whom",
    "whose",
    "where",
    "when",
    "why",
    "how",
    "image",
    "images",
    "picture",
    "pictures",
    "photo",
    "photos",
    "photograph",
    "scene",
    "shown",
    "show",
    "shows",
    "visible",
    "see",
    "seen",
    "depicted",
    "present",
    "contain",
    "contains",
    "appear",
    "appears",
    "true",
    "correct",
    "really",
    "also",
];

fn is_stop(word: &str) -> bool {
    STOPWORDS.contains(&word)
}

/// Entity terms a paraphrase must keep: capitalized words after the leading
/// auxiliary, plus the last word of each run of content words. Words ending
/// in -ing or -ed end a run without joining it.
pub fn extract_entities(source: &str) -> Vec<String> {
    let raw_tokens: Vec<&str> = source
        .split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '-'))
        .map(|w| w.trim_matches(|c| c == '\'' || c == '-'))
        .filter(|w| !w.is_empty())
        .collect();
    let mut entities: Vec<String> = Vec::new();
    let mut push = |word: String| {
        if !entities.contains(&word) {
            entities.push(word);
        }
    };
    let mut run: Vec<String> = Vec::new();
    let flush = |run: &mut Vec<String>, push: &mut dyn FnMut(String)| {
        if let Some(head) = run.last() {
            push(head.clone());
        }
        run.clear();
    };
    for (idx, token) in raw_tokens.iter().enumerate() {
        let lower = token.to_lowercase();
        let lower = lower.strip_suffix("'s").unwrap_or(&lower).to_string();
        if idx == 0 {
            continue;
        }
        if token.chars().next().is_some_and(char::is_uppercase) && !is_stop(&lower) {
            push(lower.clone());
        }
        let verbish = lower.len() > 4 && (lower.ends_with("ing") || lower.ends_with("ed"));
        if is_stop(&lower) || verbish || lower.chars().all(|c| c.is_ascii_digit()) {
            flush(&mut run, &mut push);
        } else {
            run.push(lower);
        }
    }
    flush(&mut run, &mut push);
    entities
}

fn mentions(tokens: &HashSet<String>, entity: &str) -> bool {
    tokens.contains(entity)
        || tokens.contains(&format!("{entity}s"))
        || tokens.contains(&format!("{entity}es"))
        || entity
            .strip_suffix('s')
            .is_some_and(|singular| tokens.contains(singular))
}

fn paraphrase_tokens(paraphrase: &str) -> HashSet<String> {
    paraphrase
        .split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '-'))
        .map(|w| w.trim_matches(|c| c == '\'' || c == '-').to_lowercase())
        .map(|w| w.strip_suffix("'s").map(str::to_string).unwrap_or(w))
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ParaphraseIssue {
    Duplicate,
    NotPositiveBinary(Vec<Violation>),
    MissingEntity(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParaphraseViolation {
    pub index: usize,
    pub paraphrase: String,
    pub issue: ParaphraseIssue,
}

/// Every problem with the set; empty when it passes. Each issue is reported
/// against every paraphrase it concerns, so permuting the input permutes the
/// report the same way.
pub fn validate_paraphrase_set(set: &ParaphraseSet) -> Vec<ParaphraseViolation> {
    let entities = extract_entities(&set.source.text);
    let mut groups: HashMap<String, usize> = HashMap::new();
    for p in &set.paraphrases {
        *groups.entry(normalize_for_dedup(p)).or_default() += 1;
    }
    let mut out = Vec::new();
    for (index, paraphrase) in set.paraphrases.iter().enumerate() {
        let violation = |issue| ParaphraseViolation {
            index,
            paraphrase: paraphrase.clone(),
            issue,
        };
        if groups[&normalize_for_dedup(paraphrase)] > 1 {
            out.push(violation(ParaphraseIssue::Duplicate));
        }
        let binary = validate_positive_binary(paraphrase);
        if !binary.is_empty() {
            out.push(violation(ParaphraseIssue::NotPositiveBinary(binary)));
        }
        let tokens = paraphrase_tokens(paraphrase);
        for entity in &entities {
            if !mentions(&tokens, entity) {
                out.push(violation(ParaphraseIssue::MissingEntity(entity.clone())));
            }
        }
    }
    out
}

/// Paraphrases for one query plus any notes about dropped items.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReformulationOutcome {
    pub set: ParaphraseSet,
    pub diagnostics: Vec<String>,
}

/// Ask the helper LLM for `n` paraphrases. A shortfall is not an error: the
/// usable subset is returned with a diagnostic.
pub fn paraphrase_query(
    gateway: &dyn ModelClient,
    llm: &ModelSettings,
    query: &AtomicQuery,
    n: usize,
) -> Result<ReformulationOutcome, ReformulationError> {
    let response = gateway.query(&llm.request(build_paraphrase_prompt(&query.text, n)))?;
    let mut diagnostics = Vec::new();
    let paraphrases = match parse_paraphrases(&response.text, n) {
        Ok(list) => list,
        Err(ReformulationError::TooFewParaphrases { expected, valid }) => {
            diagnostics.push(format!(
                "query {}: {} of {expected} paraphrases usable",
                query.id,
                valid.len()
            ));
            valid
        }
        Err(err) => return Err(err),
    };
    let mut set = ParaphraseSet {
        source: query.clone(),
        paraphrases,
        n,
    };
    let violations = validate_paraphrase_set(&set);
    if !violations.is_empty() {
        let bad: HashSet<usize> = violations
            .iter()
            .filter(|v| v.issue != ParaphraseIssue::Duplicate)
            .map(|v| v.index)
            .collect();
        for v in &violations {
            diagnostics.push(format!(
                "query {}: paraphrase `{}` dropped: {:?}",
                query.id, v.paraphrase, v.issue
            ));
        }
        set.paraphrases = set
            .paraphrases
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !bad.contains(i))
            .map(|(_, p)| p)
            .collect();
    }
    Ok(ReformulationOutcome { set, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn query(text: &str) -> AtomicQuery {
        AtomicQuery {
            id: 1,
            text: text.into(),
            source_tuple: None,
            passthrough: false,
        }
    }

    fn set(source: &str, paraphrases: &[&str]) -> ParaphraseSet {
        ParaphraseSet {
            source: query(source),
            paraphrases: paraphrases.iter().map(|s| s.to_string()).collect(),
            n: 10,
        }
    }

    #[test]
    fn prompt_embeds_the_question() {
        let prompt = build_paraphrase_prompt("Is there a truck?", 10);
        assert!(prompt.contains("```\nIs there a truck?\n```"));
        assert!(prompt.contains("Generate 10 distinct paraphrased versions"));
        assert!(prompt.contains("keep the entity names in the paraphrased questions the same"));
        assert_eq!(extract_prompt_question(&prompt).unwrap(), "Is there a truck?");
    }

    #[test]
    fn backticks_are_escaped() {
        let q = "Does the sign read ```run``` or `walk`?";
        let prompt = build_paraphrase_prompt(q, 10);
        assert_eq!(prompt.matches(FENCE).count(), 2);
        assert_eq!(extract_prompt_question(&prompt).unwrap(), q);
    }

    #[test]
    fn prompts_differ_only_in_question_slot() {
        let a = build_paraphrase_prompt("Is there a truck?", 10);
        let b = build_paraphrase_prompt("Is the dog brown?", 10);
        let start = a.find("```\n").unwrap() + 4;
        assert_eq!(a[..start], b[..start]);
        let tail_a = &a[a.rfind("\n```").unwrap()..];
        let tail_b = &b[b.rfind("\n```").unwrap()..];
        assert_eq!(tail_a, tail_b);
    }

    fn ten() -> Vec<String> {
        (1..=10).map(|i| format!("Is there truck number {i}?")).collect()
    }

    #[test]
    fn parses_numbered_lists() {
        let list = ten();
        assert_eq!(parse_paraphrases(&render_numbered_list(&list), 10).unwrap(), list);

        let with_preamble = format!("Here are the paraphrases:\n\n{}", render_numbered_list(&list));
        assert_eq!(parse_paraphrases(&with_preamble, 10).unwrap(), list);

        let parens: String = list
            .iter()
            .enumerate()
            .map(|(i, q)| format!("{}) {q}\n", i + 1))
            .collect();
        assert_eq!(parse_paraphrases(&parens, 10).unwrap(), list);
        assert_eq!(parse_paraphrases(&parens, 3).unwrap(), list[..3].to_vec());
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_paraphrases("I cannot paraphrase this.", 10),
            Err(ReformulationError::NoNumberedList)
        ));
        let out =
            "1. Is there a truck?\n2. is there a truck\n3. Is there no truck?\n4. Does the image contain a truck?";
        match parse_paraphrases(out, 10) {
            Err(ReformulationError::TooFewParaphrases { expected, valid }) => {
                assert_eq!(expected, 10);
                assert_eq!(valid, vec!["Is there a truck?", "Does the image contain a truck?"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn entity_extraction() {
        assert_eq!(extract_entities("Is there a truck?"), vec!["truck"]);
        assert_eq!(extract_entities("Is there a red truck in the image?"), vec!["truck"]);
        assert_eq!(
            extract_entities("Is this artwork created by Jacob?"),
            vec!["artwork", "jacob"]
        );
        assert_eq!(
            extract_entities("Is the man holding an umbrella?"),
            vec!["man", "umbrella"]
        );
    }

    #[test]
    fn validation() {
        assert!(validate_paraphrase_set(&set("Is there a truck?", &["Does the image contain a truck?"])).is_empty());
        let v = validate_paraphrase_set(&set("Is there a truck?", &["Does the image contain a vehicle?"]));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].issue, ParaphraseIssue::MissingEntity("truck".into()));

        let v = validate_paraphrase_set(&set(
            "Is there a truck?",
            &["Is a truck visible?", "Is a truck visible?"],
        ));
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|x| x.issue == ParaphraseIssue::Duplicate));

        let v = validate_paraphrase_set(&set("Are there trucks?", &["Is there a truck?"]));
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn paraphrase_query_against_mock() {
        use crate::gateway::{BackendKind, Gateway, MockScript, Responder, ScriptedBackend};
        use std::sync::Arc;

        let mut gateway = Gateway::new();
        let script = MockScript::new(BackendKind::Llm).fallback(Responder::Paraphrase);
        gateway.register("llm", Arc::new(ScriptedBackend::new(script)), 1);
        let llm = ModelSettings {
            backend_id: "llm".into(),
            model_name: "mock".into(),
            temperature: 0.0,
            max_tokens: 1000,
            seed: None,
        };
        for text in [
            "Is there a truck?",
            "Is this artwork created by Jacob?",
            "Is the woman holding a blue umbrella?",
            "Are there two dogs next to the red car?",
        ] {
            let out = paraphrase_query(&gateway, &llm, &query(text), 10).unwrap();
            assert_eq!(out.set.paraphrases.len(), 10, "{text}: {:?}", out.diagnostics);
            assert!(out.diagnostics.is_empty());
        }
        let out = paraphrase_query(&gateway, &llm, &query("Is there a truck?"), 20).unwrap();
        assert_eq!(out.set.paraphrases.len(), 20);
    }

    proptest! {
        #[test]
        fn parse_render_idempotent(words in prop::collection::vec("[a-z]{3,7}", 1..8)) {
            let list: Vec<String> = words
                .iter()
                .enumerate()
                .map(|(i, w)| format!("Is there a {w}{i} item?"))
                .collect();
            prop_assert_eq!(parse_paraphrases(&render_numbered_list(&list), list.len()).unwrap(), list);
        }

        #[test]
        fn validation_is_permutation_equivariant(
            picks in prop::collection::vec(0usize..6, 1..8),
            seed in any::<u64>(),
        ) {
            let pool = [
                "Is there a truck?",
                "is there a truck",
                "Does the image contain a vehicle?",
                "Is a truck parked here?",
                "Isn't there a truck?",
                "Can you see a truck?",
            ];
            let paraphrases: Vec<&str> = picks.iter().map(|&i| pool[i]).collect();
            let mut order: Vec<usize> = (0..paraphrases.len()).collect();
            let mut state = seed;
            for i in (1..order.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                order.swap(i, (state >> 33) as usize % (i + 1));
            }
            let permuted: Vec<&str> = order.iter().map(|&i| paraphrases[i]).collect();

            let key = |v: &ParaphraseViolation| (v.paraphrase.clone(), format!("{:?}", v.issue));
            let mut a: Vec<_> = validate_paraphrase_set(&set("Is there a truck?", &paraphrases)).iter().map(key).collect();
            let mut b: Vec<_> = validate_paraphrase_set(&set("Is there a truck?", &permuted)).iter().map(key).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }
}
