//! Scripted backend for tests, fixtures, and offline demos.
//!
//! A [`MockScript`] is an ordered rule list; the first rule whose matchers all
//! accept the request decides the response. Stochastic responders draw from a
//! hash of the script seed, request seed, prompt, and image, so a script
//! replays identically without any cache.

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::sync::OnceLock;

use super::{Backend, BackendError, BackendKind, ImageDigest, ModelRequest, ModelResponse, TokenProbability};
use crate::prompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Responder {
    /// Fixed text. Probabilities are returned only when the request asks for them.
    Text {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        probabilities: Option<Vec<TokenProbability>>,
    },
    /// Answer "Yes" with probability `p_yes`, else "No". At temperature 0
    /// the more likely class is returned.
    Bernoulli { p_yes: f64 },
    /// Produce a numbered list of templated paraphrases of the fenced question.
    Paraphrase,
    /// Echo the quoted initial answer out of a refinement prompt.
    InitialAnswer,
    /// Non-retryable provider refusal.
    Refuse { message: String },
    /// Retryable transport failure.
    Transport { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageDigest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_equals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    pub respond: Responder,
}

impl MockRule {
    pub fn any(respond: Responder) -> Self {
        MockRule {
            image: None,
            prompt_equals: None,
            prompt_contains: None,
            respond,
        }
    }

    pub fn prompt_equals(prompt: impl Into<String>, respond: Responder) -> Self {
        MockRule {
            prompt_equals: Some(prompt.into()),
            ..MockRule::any(respond)
        }
    }

    pub fn prompt_contains(fragment: impl Into<String>, respond: Responder) -> Self {
        MockRule {
            prompt_contains: Some(fragment.into()),
            ..MockRule::any(respond)
        }
    }

    pub fn on_image(mut self, image: ImageDigest) -> Self {
        self.image = Some(image);
        self
    }

    fn matches(&self, request: &ModelRequest) -> bool {
        if let Some(image) = &self.image {
            if request.image_ref.as_ref() != Some(image) {
                return false;
            }
        }
        if let Some(prompt) = &self.prompt_equals {
            if &request.prompt != prompt {
                return false;
            }
        }
        if let Some(fragment) = &self.prompt_contains {
            if !request.prompt.contains(fragment.as_str()) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub kind: BackendKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    /// Used when no rule matches; without one an unmatched request is refused.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<Responder>,
}

impl MockScript {
    pub fn new(kind: BackendKind) -> Self {
        MockScript {
            kind,
            seed: 0,
            rules: Vec::new(),
            fallback: None,
        }
    }

    pub fn rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn fallback(mut self, responder: Responder) -> Self {
        self.fallback = Some(responder);
        self
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(std::io::Error::other)
    }
}

pub struct ScriptedBackend {
    script: MockScript,
}

impl ScriptedBackend {
    pub fn new(script: MockScript) -> Self {
        ScriptedBackend { script }
    }

    fn draw(&self, request: &ModelRequest) -> f64 {
        let mut hasher = Sha256::new();
        hasher.update(self.script.seed.to_be_bytes());
        hasher.update(request.seed.unwrap_or(0).to_be_bytes());
        hasher.update((request.prompt.len() as u64).to_be_bytes());
        hasher.update(request.prompt.as_bytes());
        if let Some(image) = &request.image_ref {
            hasher.update(image.as_bytes());
        }
        let digest = hasher.finalize();
        let word = u64::from_be_bytes(digest[..8].try_into().unwrap());
        (word >> 11) as f64 / (1u64 << 53) as f64
    }

    fn respond(&self, responder: &Responder, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        match responder {
            Responder::Text { text, probabilities } => Ok(ModelResponse {
                text: text.clone(),
                token_probabilities: if request.want_probabilities {
                    probabilities.clone()
                } else {
                    None
                },
                latency_ms: 0,
            }),
            Responder::Bernoulli { p_yes } => {
                let p_yes = p_yes.clamp(0.0, 1.0);
                let yes = if request.temperature == 0.0 {
                    p_yes >= 0.5
                } else {
                    self.draw(request) < p_yes
                };
                Ok(ModelResponse {
                    text: if yes { "Yes" } else { "No" }.to_string(),
                    token_probabilities: request.want_probabilities.then(|| {
                        vec![
                            TokenProbability::new("Yes", p_yes),
                            TokenProbability::new("No", 1.0 - p_yes),
                        ]
                    }),
                    latency_ms: 0,
                })
            }
            Responder::Paraphrase => {
                let raw = prompt::fenced_block_after(&request.prompt, "Input question:")
                    .ok_or_else(|| BackendError::Refusal("no fenced question to paraphrase".into()))?;
                let question = prompt::unescape_fenced(raw);
                let n = requested_count(&request.prompt).unwrap_or(10);
                let list = template_paraphrases(&question, n)
                    .iter()
                    .enumerate()
                    .map(|(i, p)| format!("{}. {p}", i + 1))
                    .collect::<Vec<_>>()
                    .join("\n");
                Ok(ModelResponse::text(list))
            }
            Responder::InitialAnswer => {
                let raw = prompt::quoted_after(&request.prompt, "Model's initial answer:")
                    .ok_or_else(|| BackendError::Refusal("no initial answer in prompt".into()))?;
                Ok(ModelResponse::text(prompt::unescape_quoted(raw)))
            }
            Responder::Refuse { message } => Err(BackendError::Refusal(message.clone())),
            Responder::Transport { message } => Err(BackendError::Transport(message.clone())),
        }
    }
}

impl Backend for ScriptedBackend {
    fn kind(&self) -> BackendKind {
        self.script.kind
    }

    fn complete(&self, request: &ModelRequest, _image: Option<&[u8]>) -> Result<ModelResponse, BackendError> {
        let responder = self
            .script
            .rules
            .iter()
            .find(|rule| rule.matches(request))
            .map(|rule| &rule.respond)
            .or(self.script.fallback.as_ref())
            .ok_or_else(|| BackendError::Refusal("no scripted response for request".into()))?;
        self.respond(responder, request)
    }
}

fn requested_count(prompt: &str) -> Option<usize> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"Generate (\d+) distinct").unwrap());
    re.captures(prompt)?.get(1)?.as_str().parse().ok()
}

const TEMPLATES: &[&str] = &[
    "Does the image show that {q}?",
    "Is it true that {q}?",
    "Can you confirm that {q}?",
    "Is it correct that {q}?",
    "Does the picture indicate that {q}?",
    "Can it be seen in the image that {q}?",
    "Is it visible in the photo that {q}?",
    "Do you observe that {q}?",
    "Does this image depict that {q}?",
    "Is it accurate to say that {q}?",
    "Can one tell from the picture that {q}?",
    "Is it the case that {q}?",
    "Does the scene show that {q}?",
    "Does it appear that {q}?",
];

/// Deterministic paraphrases that keep the whole source question (and thus
/// every entity name) intact.
pub(crate) fn template_paraphrases(question: &str, n: usize) -> Vec<String> {
    let core = question.trim().trim_end_matches('?').trim();
    let mut chars = core.chars();
    let lowered = match chars.next() {
        Some(first) => first.to_lowercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    };
    (0..n)
        .map(|i| {
            let template = TEMPLATES[i % TEMPLATES.len()];
            let mut text = template.replace("{q}", &lowered);
            if i >= TEMPLATES.len() {
                text = format!("{} (variant {})", text.trim_end_matches('?'), i / TEMPLATES.len() + 1) + "?";
            }
            text
        })
        .collect()
}
