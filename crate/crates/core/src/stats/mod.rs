//! Answer-variance diagnostics and the hypothesis tests behind them, written
//! from first principles (no statistics crate).

mod hypothesis;
pub mod special;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::YesNo;
use crate::verification::VerificationRecord;

pub use hypothesis::{
    mann_whitney_u, mann_whitney_u_exact, mann_whitney_u_normal, pearson, point_biserial, welch_t, TestMethod,
    TestResult, EXACT_U_LIMIT,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("not enough observations")]
    InsufficientData,
    #[error("both groups have zero variance and different means")]
    ZeroVariancePair,
    #[error("degenerate input: a single class or constant values")]
    DegenerateInput,
    #[error("inputs differ in length")]
    LengthMismatch,
    #[error("NaN in input")]
    NonFinite,
    #[error("all observations are {0}; need both correct and incorrect")]
    SingleClass(&'static str),
    #[error("example `{0}` has no gold label")]
    MissingGold(String),
    #[error("example `{0}` has no parseable answers")]
    NoParseableSamples(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceObservation {
    pub example_id: String,
    pub p_yes: f64,
    /// `p_yes * (1 - p_yes)`.
    pub variance: f64,
    pub correct: bool,
}

impl VarianceObservation {
    pub fn new(example_id: impl Into<String>, p_yes: f64, correct: bool) -> Self {
        VarianceObservation {
            example_id: example_id.into(),
            p_yes,
            variance: p_yes * (1.0 - p_yes),
            correct,
        }
    }
}

/// One verification record with its example id and gold label.
#[derive(Debug, Clone, Copy)]
pub struct LabeledRecord<'a> {
    pub example_id: &'a str,
    pub record: &'a VerificationRecord,
    pub gold: Option<YesNo>,
}

/// Correctness is judged on the record's calibrated (majority) answer.
pub fn variance_observations(records: &[LabeledRecord<'_>]) -> Result<Vec<VarianceObservation>, StatsError> {
    records
        .iter()
        .map(|r| {
            let gold = r
                .gold
                .ok_or_else(|| StatsError::MissingGold(r.example_id.to_string()))?;
            let no_samples = || StatsError::NoParseableSamples(r.example_id.to_string());
            let p_yes = r.record.p_yes().ok_or_else(no_samples)?;
            let (majority, _) = r.record.calibrated().ok_or_else(no_samples)?;
            Ok(VarianceObservation::new(r.example_id, p_yes, majority == gold))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub mean_var_correct: f64,
    pub mean_var_incorrect: f64,
    /// Correct minus incorrect. `None` when the test is undefined on this
    /// input; the reason is listed in `notes`.
    pub welch: Option<TestResult>,
    pub mwu: Option<TestResult>,
    /// Correctness (correct = 1) against variance.
    pub pbc: Option<TestResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub fn variance_correctness_report(observations: &[VarianceObservation]) -> Result<VarianceReport, StatsError> {
    let correct: Vec<f64> = observations.iter().filter(|o| o.correct).map(|o| o.variance).collect();
    let incorrect: Vec<f64> = observations.iter().filter(|o| !o.correct).map(|o| o.variance).collect();
    if correct.is_empty() {
        return Err(StatsError::SingleClass("incorrect"));
    }
    if incorrect.is_empty() {
        return Err(StatsError::SingleClass("correct"));
    }
    let mut notes = Vec::new();
    let mut keep = |name: &str, result: Result<TestResult, StatsError>| match result {
        Ok(r) => Some(r),
        Err(e) => {
            notes.push(format!("{name}: {e}"));
            None
        }
    };
    let welch = keep("welch", welch_t(&correct, &incorrect));
    let mwu = keep("mwu", mann_whitney_u(&correct, &incorrect));
    let labels: Vec<bool> = observations.iter().map(|o| o.correct).collect();
    let values: Vec<f64> = observations.iter().map(|o| o.variance).collect();
    let pbc = keep("pbc", point_biserial(&labels, &values));
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(VarianceReport {
        n_correct: correct.len(),
        n_incorrect: incorrect.len(),
        mean_var_correct: mean(&correct),
        mean_var_incorrect: mean(&incorrect),
        welch,
        mwu,
        pbc,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::Answer;
    use crate::confidence::{select_answer, Aggregator, AnswerSample, Estimator};
    use crate::querygen::AtomicQuery;

    fn record(yes: usize, no: usize) -> VerificationRecord {
        let samples: Vec<AnswerSample> = (0..yes + no)
            .map(|i| AnswerSample::new(i, if i < yes { Answer::Yes } else { Answer::No }, None))
            .collect();
        VerificationRecord {
            query: AtomicQuery::passthrough("Is there a dog?"),
            phrasings: vec![],
            raw_answers: vec![],
            result: select_answer(&samples, Estimator::SelfConsistency, Aggregator::Mean, None).ok(),
            samples,
        }
    }

    #[test]
    fn observations() {
        // a 5/5 split ties and falls back to No
        let cases = [(10, 0, 0.0, true), (5, 5, 0.25, false), (7, 3, 0.21, true)];
        for (yes, no, variance, correct) in cases {
            let rec = record(yes, no);
            let obs = variance_observations(&[LabeledRecord {
                example_id: "e",
                record: &rec,
                gold: Some(YesNo::Yes),
            }])
            .unwrap();
            assert!((obs[0].variance - variance).abs() < 1e-15);
            assert_eq!(obs[0].correct, correct);
        }
        let rec = record(1, 0);
        let missing = LabeledRecord {
            example_id: "e",
            record: &rec,
            gold: None,
        };
        assert_eq!(
            variance_observations(&[missing]),
            Err(StatsError::MissingGold("e".into()))
        );
    }

    #[test]
    fn perfect_separation() {
        let mut obs: Vec<_> = (0..5)
            .map(|i| VarianceObservation::new(format!("c{i}"), 1.0, true))
            .collect();
        obs.extend((0..5).map(|i| VarianceObservation::new(format!("i{i}"), 0.5, false)));
        let report = variance_correctness_report(&obs).unwrap();
        assert_eq!(report.mean_var_incorrect - report.mean_var_correct, 0.25);
        assert!((report.pbc.unwrap().statistic + 1.0).abs() < 1e-12);
        assert!(report.welch.is_none());
        assert_eq!(report.notes.len(), 1);
    }

    #[test]
    fn identical_distributions() {
        let mut obs = Vec::new();
        for (i, p) in [0.5, 0.7, 0.9, 1.0].iter().enumerate() {
            obs.push(VarianceObservation::new(format!("c{i}"), *p, true));
            obs.push(VarianceObservation::new(format!("i{i}"), *p, false));
        }
        let report = variance_correctness_report(&obs).unwrap();
        assert_eq!(report.welch.unwrap().p_value, 1.0);

        let uniform: Vec<_> = (0..6)
            .map(|i| VarianceObservation::new(format!("u{i}"), 0.7, i % 2 == 0))
            .collect();
        let report = variance_correctness_report(&uniform).unwrap();
        assert_eq!(report.welch.unwrap().p_value, 1.0);
        assert!(report.pbc.is_none());
    }

    #[test]
    fn single_class() {
        let obs = vec![VarianceObservation::new("a", 1.0, true)];
        assert_eq!(
            variance_correctness_report(&obs),
            Err(StatsError::SingleClass("correct"))
        );
    }
}
