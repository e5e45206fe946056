use thiserror::Error;

use super::ModelResponse;
use crate::answer::{Answer, YesNo};
use crate::confidence::normalize_answer;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbabilityError {
    #[error("response carries no token probabilities")]
    MissingProbabilities,
    #[error("no yes-like or no-like token among the candidates")]
    NoAnswerToken,
}

const YES_TOKENS: &[&str] = &["yes", "yeah", "yep"];
const NO_TOKENS: &[&str] = &["no", "nope"];

fn classify_token(token: &str) -> Option<YesNo> {
    // SentencePiece / BPE markers and stray punctuation around the word
    let word = token
        .trim_start_matches(['▁', 'Ġ'])
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_ascii_lowercase();
    if YES_TOKENS.contains(&word.as_str()) {
        Some(YesNo::Yes)
    } else if NO_TOKENS.contains(&word.as_str()) {
        Some(YesNo::No)
    } else {
        None
    }
}

/// Probability of the predicted class, renormalized over the yes/no pair at
/// the first answer position.
///
/// The predicted class is taken from the response text when it normalizes to
/// Yes or No, otherwise from whichever class holds more probability mass.
pub fn extract_yes_no_probability(response: &ModelResponse) -> Result<f64, ProbabilityError> {
    let candidates = response
        .token_probabilities
        .as_ref()
        .ok_or(ProbabilityError::MissingProbabilities)?;

    let (mut p_yes, mut p_no) = (0.0_f64, 0.0_f64);
    let mut seen = false;
    for candidate in candidates {
        let p = candidate.probability.clamp(0.0, 1.0);
        match classify_token(&candidate.token) {
            Some(YesNo::Yes) => {
                p_yes += p;
                seen = true;
            }
            Some(YesNo::No) => {
                p_no += p;
                seen = true;
            }
            None => {}
        }
    }
    if !seen {
        return Err(ProbabilityError::NoAnswerToken);
    }
    let total = p_yes + p_no;
    let yes_share = if total > 0.0 { p_yes / total } else { 0.5 };

    let predicted = match normalize_answer(&response.text) {
        Answer::Yes => YesNo::Yes,
        Answer::No => YesNo::No,
        Answer::Unparseable => {
            if p_yes >= p_no {
                YesNo::Yes
            } else {
                YesNo::No
            }
        }
    };
    Ok(match predicted {
        YesNo::Yes => yes_share,
        YesNo::No => 1.0 - yes_share,
    })
}
