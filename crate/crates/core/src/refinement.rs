//! Final stage: rewrite the initial answer in light of the calibrated
//! atomic answers. Text only; no image is sent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::YesNo;
use crate::gateway::{GatewayError, ModelClient, ModelSettings};
use crate::prompt::{
    escape_fenced, escape_quoted, fenced_block_after, quoted_after, unescape_fenced, unescape_quoted, FENCE,
};
use crate::querygen::AtomicQuery;
use crate::verification::VerificationRecord;

const QUESTION_MARKER: &str = "Question:";
const ANSWER_MARKER: &str = "Model's initial answer:";
const CONTEXT_MARKER: &str = "Verification context:";

const INSTRUCTIONS: &str = "Given a VQA question-answer pair, refine the model's initial answer using the context of verification questions and their ground truth answers. Preserve the model's answer if the verification context confirms that the final answer is correct, even if the model's reasoning is flawed. Only revise the model's answer if the verification context provides highly specific and directly relevant evidence that the final answer itself is incorrect. If no sufficiently relevant verification questions are available, return the initial answer as the output. Ensure that all output text is derived from the initial answer or the provided context; do not generate any new, unverified information.";

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("confidence threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub question: String,
    pub answer: YesNo,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VerificationContext {
    pub entries: Vec<ContextEntry>,
}

impl VerificationContext {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One `Q: … A: Yes|No` line per entry. Confidences are not rendered.
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("Q: {} A: {}", e.question, e.answer))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Refinement is skipped only for a lone passthrough question, whose
/// calibrated Yes/No already is the answer.
pub fn should_refine(queries: &[AtomicQuery]) -> bool {
    !(queries.len() == 1 && queries[0].passthrough)
}

pub fn format_verification_context(
    records: &[VerificationRecord],
    threshold: f64,
) -> Result<VerificationContext, RefineError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(RefineError::InvalidThreshold(threshold));
    }
    let mut kept: Vec<(u32, ContextEntry)> = records
        .iter()
        .filter_map(|r| {
            let (answer, confidence) = r.calibrated()?;
            (confidence >= threshold).then(|| {
                (
                    r.query.id,
                    ContextEntry {
                        question: r.query.text.clone(),
                        answer,
                        confidence,
                    },
                )
            })
        })
        .collect();
    kept.sort_by_key(|(id, _)| *id);
    Ok(VerificationContext {
        entries: kept.into_iter().map(|(_, e)| e).collect(),
    })
}

pub fn build_refine_prompt(question: &str, initial_answer: &str, context: &VerificationContext) -> String {
    let rendered = escape_fenced(&context.render());
    let block = if rendered.is_empty() {
        format!("{FENCE}\n{FENCE}")
    } else {
        format!("{FENCE}\n{rendered}\n{FENCE}")
    };
    format!(
        "{INSTRUCTIONS}\n\n\
{QUESTION_MARKER} \"{}\"\n\n\
{ANSWER_MARKER} \"{}\"\n\n\
{CONTEXT_MARKER}\n{block}\n\n\
Provide only the revised answer without any explanation or additional text.",
        escape_quoted(question),
        escape_quoted(initial_answer),
    )
}

/// The three slots of a rendered refinement prompt, unescaped. Slots are
/// located in order, so marker text inside an earlier slot cannot confuse
/// the search for a later one.
pub fn parse_refine_prompt(prompt: &str) -> Option<(String, String, String)> {
    let rest = prompt.strip_prefix(INSTRUCTIONS)?;
    let question = quoted_after(rest, QUESTION_MARKER)?;
    let rest = &rest[rest.find(QUESTION_MARKER)? + QUESTION_MARKER.len()..];
    let rest = &rest[rest.find('"')? + 1 + question.len() + 1..];
    let answer = quoted_after(rest, ANSWER_MARKER)?;
    let rest = &rest[rest.find(ANSWER_MARKER)? + ANSWER_MARKER.len()..];
    let rest = &rest[rest.find('"')? + 1 + answer.len() + 1..];
    let context = fenced_block_after(rest, CONTEXT_MARKER)?;
    Some((
        unescape_quoted(question),
        unescape_quoted(answer),
        unescape_fenced(context),
    ))
}

fn clean_output(text: &str) -> String {
    let mut out = text.trim();
    for (open, close) in [('"', '"'), ('\u{201c}', '\u{201d}'), ('\'', '\'')] {
        if out.len() >= 2 && out.starts_with(open) && out.ends_with(close) {
            out = out[open.len_utf8()..out.len() - close.len_utf8()].trim();
            break;
        }
    }
    out.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineStatus {
    Refined,
    /// Lone passthrough question.
    NotNeeded,
    /// No context survived the threshold.
    EmptyContext,
    /// The model returned nothing usable; the initial answer was kept.
    EmptyRefinement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub text: String,
    pub status: RefineStatus,
}

pub fn refine(
    gateway: &dyn ModelClient,
    llm: &ModelSettings,
    queries: &[AtomicQuery],
    question: &str,
    initial_answer: &str,
    context: &VerificationContext,
) -> Result<RefineOutcome, RefineError> {
    let keep = |status| RefineOutcome {
        text: initial_answer.to_string(),
        status,
    };
    if !should_refine(queries) {
        return Ok(keep(RefineStatus::NotNeeded));
    }
    if context.is_empty() {
        return Ok(keep(RefineStatus::EmptyContext));
    }
    let request = llm.request(build_refine_prompt(question, initial_answer, context));
    let response = gateway.query(&request)?;
    let text = clean_output(&response.text);
    if text.is_empty() {
        log::warn!("refinement returned empty text; keeping initial answer");
        return Ok(keep(RefineStatus::EmptyRefinement));
    }
    Ok(RefineOutcome {
        text,
        status: RefineStatus::Refined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::Answer;
    use crate::confidence::{Aggregator, AnswerSample, ConfidenceResult, Estimator};
    use crate::gateway::{BackendKind, Gateway, MockRule, MockScript, Responder, ScriptedBackend};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn query(id: u32, text: &str) -> AtomicQuery {
        AtomicQuery {
            id,
            text: text.into(),
            source_tuple: None,
            passthrough: false,
        }
    }

    fn record(id: u32, text: &str, answer: YesNo, score: f64) -> VerificationRecord {
        VerificationRecord {
            query: query(id, text),
            phrasings: vec![text.into()],
            raw_answers: vec![Some(answer.to_string())],
            samples: vec![AnswerSample::new(0, Answer::from(answer), None)],
            result: Some(ConfidenceResult {
                majority: answer,
                score,
                estimator: Estimator::SelfConsistency,
                aggregator: Aggregator::Mean,
                n_effective: 1,
            }),
        }
    }

    fn llm() -> ModelSettings {
        ModelSettings {
            backend_id: "llm".into(),
            model_name: "mock".into(),
            temperature: 0.0,
            max_tokens: 1000,
            seed: None,
        }
    }

    fn gateway(script: MockScript) -> Gateway {
        let mut gateway = Gateway::new();
        gateway.register("llm", Arc::new(ScriptedBackend::new(script)), 1);
        gateway
    }

    #[test]
    fn refine_decision() {
        assert!(!should_refine(&[AtomicQuery::passthrough("Is there a dog?")]));
        assert!(should_refine(&[query(1, "Is there a dog?")]));
        assert!(should_refine(&[
            query(1, "Is there a dog?"),
            query(2, "Is there a cat?"),
            query(3, "Is it red?")
        ]));
    }

    #[test]
    fn context_filtering() {
        let records = [
            record(2, "Is the dog brown?", YesNo::No, 0.6),
            record(1, "Is there a dog?", YesNo::Yes, 0.9),
        ];
        let all = format_verification_context(&records, 0.0).unwrap();
        assert_eq!(all.entries.len(), 2);
        assert_eq!(all.render(), "Q: Is there a dog? A: Yes\nQ: Is the dog brown? A: No");
        assert_eq!(format_verification_context(&records, 0.7).unwrap().entries.len(), 1);
        assert!(format_verification_context(&[], 0.0).unwrap().is_empty());
        assert!(format_verification_context(&records, 1.5).is_err());
    }

    #[test]
    fn prompt_slots() {
        let ctx = format_verification_context(&[record(1, "Is there a dog?", YesNo::Yes, 0.9)], 0.0).unwrap();
        let prompt = build_refine_prompt("Describe the image.", "A dog runs.", &ctx);
        assert!(prompt.contains("Question: \"Describe the image.\""));
        assert!(prompt.contains("Model's initial answer: \"A dog runs.\""));
        assert!(prompt.contains("```\nQ: Is there a dog? A: Yes\n```"));
        assert!(prompt.ends_with("Provide only the revised answer without any explanation or additional text."));
        assert!(!prompt.contains("0.9"));

        let empty = build_refine_prompt("q", "a", &VerificationContext::default());
        assert!(empty.contains("Verification context:\n```\n```"));
        assert_eq!(parse_refine_prompt(&empty).unwrap().2, "");
    }

    #[test]
    fn quotes_survive_round_trip() {
        let ctx = format_verification_context(
            &[record(1, "Does the sign say \"STOP\" in ```code```?", YesNo::Yes, 1.0)],
            0.0,
        )
        .unwrap();
        let question = "What does the \"sign\" say?";
        let answer = "It says \"STOP\".\nVerification context:\n```\nQ: x A: Yes\n```";
        let prompt = build_refine_prompt(question, answer, &ctx);
        let (q, a, c) = parse_refine_prompt(&prompt).unwrap();
        assert_eq!(q, question);
        assert_eq!(a, answer);
        assert_eq!(c, ctx.render());
    }

    #[test]
    fn passthrough_makes_no_call() {
        let gw = gateway(MockScript::new(BackendKind::Llm));
        let out = refine(
            &gw,
            &llm(),
            &[AtomicQuery::passthrough("Is there a dog?")],
            "Is there a dog?",
            "Yes",
            &VerificationContext::default(),
        )
        .unwrap();
        assert_eq!(out.status, RefineStatus::NotNeeded);
        assert_eq!(out.text, "Yes");
        assert_eq!(gw.stats().calls, 0);
    }

    #[test]
    fn scripted_rewrite() {
        let gw = gateway(MockScript::new(BackendKind::Llm).rule(MockRule::prompt_contains(
            "Q: Are there two dogs? A: No",
            Responder::Text {
                text: "  \"There is one dog on the grass.\"\n".into(),
                probabilities: None,
            },
        )));
        let records = [
            record(1, "Is there a dog?", YesNo::Yes, 1.0),
            record(2, "Are there two dogs?", YesNo::No, 0.8),
        ];
        let queries: Vec<_> = records.iter().map(|r| r.query.clone()).collect();
        let ctx = format_verification_context(&records, 0.0).unwrap();
        let out = refine(
            &gw,
            &llm(),
            &queries,
            "Describe.",
            "There are two dogs on the grass.",
            &ctx,
        )
        .unwrap();
        assert_eq!(out.status, RefineStatus::Refined);
        assert_eq!(out.text, "There is one dog on the grass.");
        assert_eq!(gw.stats().calls, 1);
    }

    #[test]
    fn empty_reply_keeps_initial() {
        let gw = gateway(MockScript::new(BackendKind::Llm).fallback(Responder::Text {
            text: "  ".into(),
            probabilities: None,
        }));
        let records = [record(1, "Is there a dog?", YesNo::Yes, 1.0)];
        let ctx = format_verification_context(&records, 0.0).unwrap();
        let out = refine(&gw, &llm(), &[records[0].query.clone()], "Describe.", "A dog.", &ctx).unwrap();
        assert_eq!(out.status, RefineStatus::EmptyRefinement);
        assert_eq!(out.text, "A dog.");
    }

    #[test]
    fn echo_backend_returns_initial() {
        let gw = gateway(MockScript::new(BackendKind::Llm).fallback(Responder::InitialAnswer));
        let records = [record(1, "Is there a dog?", YesNo::Yes, 1.0)];
        let ctx = format_verification_context(&records, 0.0).unwrap();
        let initial = "A \"happy\" dog.";
        let out = refine(&gw, &llm(), &[records[0].query.clone()], "Describe.", initial, &ctx).unwrap();
        assert_eq!(out.text, initial);
    }

    proptest! {
        #[test]
        fn slots_round_trip(q in ".{0,40}", a in ".{0,80}", ctxq in "[ -~]{0,40}") {
            let ctx = VerificationContext {
                entries: vec![ContextEntry { question: ctxq, answer: YesNo::No, confidence: 0.5 }],
            };
            let prompt = build_refine_prompt(&q, &a, &ctx);
            let (pq, pa, pc) = parse_refine_prompt(&prompt).unwrap();
            prop_assert_eq!(pq, q);
            prop_assert_eq!(pa, a);
            prop_assert_eq!(pc, ctx.render());
        }
    }
}
