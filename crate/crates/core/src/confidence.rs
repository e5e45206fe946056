//! Answer normalization, majority voting, and the two confidence estimators.
//!
//! Self-consistency (black-box) is the fraction of parseable samples that
//! agree with the majority answer:
//!
//! ```text
//! C_sc = (1/n) * sum_i 1{a_i == majority}
//! ```
//!
//! Self-confidence (gray-box) weights each agreeing sample by the model's
//! probability for the answer it gave:
//!
//! ```text
//! C_sf = (1/n) * sum_i 1{a_i == majority} * p(a_i | q_i, v)
//! ```
//!
//! `n` counts parseable samples only. Sums are taken over sorted terms so every
//! result is bit-identical under any reordering of the samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{Answer, YesNo};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerSample {
    pub question_index: usize,
    pub answer: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
}

impl AnswerSample {
    pub fn new(question_index: usize, answer: Answer, probability: Option<f64>) -> Self {
        AnswerSample {
            question_index,
            answer,
            probability,
        }
    }

    /// Probability this sample assigns to `class`.
    fn class_probability(&self, class: YesNo) -> Option<f64> {
        let decided = self.answer.decided()?;
        let p = self.probability?;
        Some(if decided == class { p } else { 1.0 - p })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    SelfConsistency,
    SelfConfidence,
}

impl std::str::FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "self_consistency" => Ok(Estimator::SelfConsistency),
            "self_confidence" => Ok(Estimator::SelfConfidence),
            other => Err(format!("unknown estimator `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    Mean,
    Max,
}

impl std::str::FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Aggregator::Mean),
            "max" => Ok(Aggregator::Max),
            other => Err(format!("unknown aggregator `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceResult {
    pub majority: YesNo,
    pub score: f64,
    pub estimator: Estimator,
    pub aggregator: Aggregator,
    pub n_effective: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfidenceError {
    #[error("no parseable samples")]
    NoParseableSamples,
    #[error("empty sample set")]
    EmptySampleSet,
    #[error("sample {0} has no probability")]
    MissingProbability(usize),
}

const YES_LIKE: &[&str] = &["yes", "yeah", "yep"];
const NO_LIKE: &[&str] = &["no", "nope"];

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .map(|w| w.trim_matches('\'').to_lowercase())
}

/// Map free text onto Yes / No / Unparseable.
pub fn normalize_answer(raw: &str) -> Answer {
    let first_alpha = raw
        .split(|c: char| !c.is_alphabetic())
        .find(|w| !w.is_empty())
        .map(str::to_lowercase);
    if let Some(first) = first_alpha.as_deref() {
        if YES_LIKE.contains(&first) {
            return Answer::Yes;
        }
        if NO_LIKE.contains(&first) {
            return Answer::No;
        }
    }

    let first_sentence = raw
        .split_inclusive(['.', '!', '?', '\n'])
        .find(|s| s.chars().any(char::is_alphabetic))
        .unwrap_or("");
    let (mut yes, mut no) = (false, false);
    for word in words(first_sentence) {
        match word.as_str() {
            "yes" => yes = true,
            "no" => no = true,
            _ => {}
        }
    }
    match (yes, no) {
        (true, false) => Answer::Yes,
        (false, true) => Answer::No,
        _ => Answer::Unparseable,
    }
}

fn parseable(samples: &[AnswerSample]) -> impl Iterator<Item = &AnswerSample> {
    samples.iter().filter(|s| s.answer != Answer::Unparseable)
}

fn counts(samples: &[AnswerSample]) -> (usize, usize) {
    parseable(samples).fold((0, 0), |(y, n), s| match s.answer {
        Answer::Yes => (y + 1, n),
        Answer::No => (y, n + 1),
        Answer::Unparseable => (y, n),
    })
}

fn tie_break(original: Option<YesNo>) -> YesNo {
    original.unwrap_or(YesNo::No)
}

/// Sum in ascending order so the result does not depend on sample order.
fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

/// Argmax of Yes/No counts over parseable samples. Exact ties go to
/// `original_answer`, or to No when there is none.
pub fn majority_vote(samples: &[AnswerSample], original_answer: Option<YesNo>) -> Result<YesNo, ConfidenceError> {
    let (yes, no) = counts(samples);
    if yes + no == 0 {
        return Err(ConfidenceError::NoParseableSamples);
    }
    Ok(match yes.cmp(&no) {
        std::cmp::Ordering::Greater => YesNo::Yes,
        std::cmp::Ordering::Less => YesNo::No,
        std::cmp::Ordering::Equal => tie_break(original_answer),
    })
}

pub fn self_consistency(samples: &[AnswerSample], majority: YesNo) -> Result<f64, ConfidenceError> {
    let (yes, no) = counts(samples);
    let n = yes + no;
    if n == 0 {
        return Err(ConfidenceError::EmptySampleSet);
    }
    let agree = match majority {
        YesNo::Yes => yes,
        YesNo::No => no,
    };
    Ok(agree as f64 / n as f64)
}

pub fn self_confidence(samples: &[AnswerSample], majority: YesNo) -> Result<f64, ConfidenceError> {
    let mut n = 0usize;
    let mut terms = Vec::new();
    for sample in parseable(samples) {
        let p = sample
            .probability
            .ok_or(ConfidenceError::MissingProbability(sample.question_index))?;
        n += 1;
        if sample.answer.decided() == Some(majority) {
            terms.push(p.clamp(0.0, 1.0));
        }
    }
    if n == 0 {
        return Err(ConfidenceError::EmptySampleSet);
    }
    Ok(ordered_sum(terms) / n as f64)
}

/// MEAN or MAX of the per-sample probability of `class` over parseable samples.
pub fn class_score(samples: &[AnswerSample], class: YesNo, aggregator: Aggregator) -> Result<f64, ConfidenceError> {
    let mut terms = Vec::new();
    for sample in parseable(samples) {
        let p = sample
            .class_probability(class)
            .ok_or(ConfidenceError::MissingProbability(sample.question_index))?;
        terms.push(p.clamp(0.0, 1.0));
    }
    if terms.is_empty() {
        return Err(ConfidenceError::EmptySampleSet);
    }
    Ok(match aggregator {
        Aggregator::Mean => {
            let n = terms.len() as f64;
            ordered_sum(terms) / n
        }
        Aggregator::Max => terms.into_iter().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Pick the calibrated answer and its confidence score.
pub fn select_answer(
    samples: &[AnswerSample],
    estimator: Estimator,
    aggregator: Aggregator,
    original_answer: Option<YesNo>,
) -> Result<ConfidenceResult, ConfidenceError> {
    let (yes, no) = counts(samples);
    let n_effective = yes + no;
    if n_effective == 0 {
        return Err(ConfidenceError::NoParseableSamples);
    }
    let (majority, score) = match estimator {
        Estimator::SelfConsistency => {
            let majority = majority_vote(samples, original_answer)?;
            (majority, self_consistency(samples, majority)?)
        }
        Estimator::SelfConfidence => {
            let yes_score = class_score(samples, YesNo::Yes, aggregator)?;
            let no_score = class_score(samples, YesNo::No, aggregator)?;
            let majority = if yes_score > no_score {
                YesNo::Yes
            } else if no_score > yes_score {
                YesNo::No
            } else {
                tie_break(original_answer)
            };
            (majority, self_confidence(samples, majority)?)
        }
    };
    Ok(ConfidenceResult {
        majority,
        score,
        estimator,
        aggregator,
        n_effective,
    })
}
