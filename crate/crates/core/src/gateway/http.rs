//! HTTP backend for hosted model endpoints.
//!
//! Two wire protocols are supported. `taco` is a flat JSON schema:
//!
//! ```text
//! POST {endpoint}
//! {"model", "prompt", "image_base64"?, "temperature", "max_tokens", "seed"?, "logprobs"}
//! -> {"text", "token_probabilities"?: [[token, p], ...]}
//! ```
//!
//! `openai_chat` speaks the chat-completions dialect with `top_logprobs` for
//! the first generated token. The bearer token is read from the environment
//! variable named by `api_key_env` at request time.

use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, BackendKind, ModelRequest, ModelResponse, TokenProbability};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HttpProtocol {
    #[default]
    Taco,
    OpenaiChat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub kind: BackendKind,
    /// URL template; `{model}` is replaced by the request's model name.
    pub endpoint: String,
    #[serde(default)]
    pub protocol: HttpProtocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_top_logprobs() -> u32 {
    5
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend { config, client })
    }

    pub fn url(&self, model: &str) -> String {
        self.config.endpoint.replace("{model}", model)
    }

    pub fn request_body(&self, request: &ModelRequest, image: Option<&[u8]>) -> Value {
        let image_b64 = image
            .filter(|bytes| !bytes.is_empty())
            .map(|bytes| base64::engine::general_purpose::STANDARD.encode(bytes));
        match self.config.protocol {
            HttpProtocol::Taco => {
                let mut body = json!({
                    "model": request.model_name,
                    "prompt": request.prompt,
                    "temperature": request.temperature,
                    "max_tokens": request.max_tokens,
                    "logprobs": request.want_probabilities,
                });
                if let Some(b64) = image_b64 {
                    body["image_base64"] = json!(b64);
                }
                if let Some(seed) = request.seed {
                    body["seed"] = json!(seed);
                }
                body
            }
            HttpProtocol::OpenaiChat => {
                let mut content = vec![json!({"type": "text", "text": request.prompt})];
                if let (Some(b64), Some(bytes)) = (image_b64, image) {
                    content.push(json!({
                        "type": "image_url",
                        "image_url": {"url": format!("data:{};base64,{b64}", sniff_mime(bytes))}
                    }));
                }
                let mut body = json!({
                    "model": request.model_name,
                    "messages": [{"role": "user", "content": content}],
                    "temperature": request.temperature,
                    "max_tokens": request.max_tokens,
                });
                if let Some(seed) = request.seed {
                    body["seed"] = json!(seed);
                }
                if request.want_probabilities {
                    body["logprobs"] = json!(true);
                    body["top_logprobs"] = json!(self.config.top_logprobs);
                }
                body
            }
        }
    }

    pub fn parse_body(&self, body: &Value) -> Result<ModelResponse, BackendError> {
        let malformed = |what: &str| BackendError::Refusal(format!("malformed response: {what}"));
        match self.config.protocol {
            HttpProtocol::Taco => {
                let text = body["text"].as_str().ok_or_else(|| malformed("missing `text`"))?;
                let token_probabilities = match &body["token_probabilities"] {
                    Value::Null => None,
                    value => Some(
                        serde_json::from_value::<Vec<TokenProbability>>(value.clone())
                            .map_err(|e| malformed(&e.to_string()))?,
                    ),
                };
                Ok(ModelResponse {
                    text: text.to_string(),
                    token_probabilities,
                    latency_ms: 0,
                })
            }
            HttpProtocol::OpenaiChat => {
                let choice = &body["choices"][0];
                let text = choice["message"]["content"]
                    .as_str()
                    .ok_or_else(|| malformed("missing choices[0].message.content"))?;
                let token_probabilities =
                    choice["logprobs"]["content"][0]["top_logprobs"]
                        .as_array()
                        .map(|candidates| {
                            candidates
                                .iter()
                                .filter_map(|c| {
                                    Some(TokenProbability::new(
                                        c["token"].as_str()?,
                                        c["logprob"].as_f64()?.exp().clamp(0.0, 1.0),
                                    ))
                                })
                                .collect()
                        });
                Ok(ModelResponse {
                    text: text.to_string(),
                    token_probabilities,
                    latency_ms: 0,
                })
            }
        }
    }
}

fn sniff_mime(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG") {
        "image/png"
    } else if bytes.starts_with(b"GIF8") {
        "image/gif"
    } else if bytes.len() > 12 && &bytes[8..12] == b"WEBP" {
        "image/webp"
    } else {
        "image/jpeg"
    }
}

impl Backend for HttpBackend {
    fn kind(&self) -> BackendKind {
        self.config.kind
    }

    fn needs_image_bytes(&self) -> bool {
        true
    }

    fn complete(&self, request: &ModelRequest, image: Option<&[u8]>) -> Result<ModelResponse, BackendError> {
        let mut builder = self
            .client
            .post(self.url(&request.model_name))
            .json(&self.request_body(request, image));
        if let Some(var) = &self.config.api_key_env {
            let token = std::env::var(var)
                .map_err(|_| BackendError::Refusal(format!("environment variable {var} is not set")))?;
            builder = builder.bearer_auth(token);
        }
        let started = Instant::now();
        let response = builder.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transport(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(BackendError::Refusal(format!("HTTP {status}: {text}")));
        }
        let body: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Refusal(format!("response is not JSON: {e}")))?;
        let mut parsed = self.parse_body(&body)?;
        parsed.latency_ms = started.elapsed().as_millis() as u64;
        Ok(parsed)
    }
}
