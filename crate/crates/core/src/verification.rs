use serde::{Deserialize, Serialize};

use crate::answer::YesNo;
use crate::confidence::{AnswerSample, ConfidenceResult};
use crate::querygen::AtomicQuery;

/// Everything gathered while verifying one atomic query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub query: AtomicQuery,
    /// Phrasings sent to the MLLM, in sample order. When the original query
    /// is included it comes first.
    pub phrasings: Vec<String>,
    /// Raw MLLM replies aligned with `phrasings`; `None` where the call failed.
    pub raw_answers: Vec<Option<String>>,
    pub samples: Vec<AnswerSample>,
    /// Absent when no sample could be parsed.
    pub result: Option<ConfidenceResult>,
}

impl VerificationRecord {
    pub fn calibrated(&self) -> Option<(YesNo, f64)> {
        self.result.as_ref().map(|r| (r.majority, r.score))
    }

    /// Fraction of parseable samples answering Yes.
    pub fn p_yes(&self) -> Option<f64> {
        let decided: Vec<YesNo> = self.samples.iter().filter_map(|s| s.answer.decided()).collect();
        if decided.is_empty() {
            return None;
        }
        let yes = decided.iter().filter(|a| **a == YesNo::Yes).count();
        Some(yes as f64 / decided.len() as f64)
    }
}
