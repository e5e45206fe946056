//! Model gateway: a uniform request surface over multimodal and text-only
//! backends, with a content-addressed record/replay cache in front.
//!
//! Every call goes through [`Gateway::query`]. The gateway validates the
//! request against the target backend's modality, consults the replay cache,
//! retries transport failures with exponential backoff, and counts calls so
//! that pipeline tests can assert exact call budgets.

mod cache;
mod http;
mod images;
mod mock;
mod probability;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CacheKey, CacheMode, CacheRecord, ReplayCache};
pub use http::{HttpBackend, HttpBackendConfig, HttpProtocol};
pub use images::{digest_bytes, ImageDigest, ImageStore};
pub use mock::{MockRule, MockScript, Responder, ScriptedBackend};
pub use probability::{extract_yes_no_probability, ProbabilityError};

/// Which kind of model a backend fronts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Image + text input.
    Mllm,
    /// Text-only input.
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub backend_id: String,
    pub model_name: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<ImageDigest>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub want_probabilities: bool,
}

impl ModelRequest {
    pub fn text(backend_id: &str, model_name: &str, prompt: impl Into<String>) -> Self {
        ModelRequest {
            backend_id: backend_id.to_string(),
            model_name: model_name.to_string(),
            prompt: prompt.into(),
            image_ref: None,
            temperature: 0.0,
            max_tokens: 1000,
            seed: None,
            want_probabilities: false,
        }
    }

    pub fn with_image(mut self, image_ref: ImageDigest) -> Self {
        self.image_ref = Some(image_ref);
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_probabilities(mut self, want: bool) -> Self {
        self.want_probabilities = want;
        self
    }

    fn validate(&self, kind: BackendKind) -> Result<(), GatewayError> {
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        match (kind, &self.image_ref) {
            (BackendKind::Mllm, None) => Err(GatewayError::InvalidRequest(format!(
                "backend {} is multimodal and requires an image_ref",
                self.backend_id
            ))),
            (BackendKind::Llm, Some(_)) => Err(GatewayError::InvalidRequest(format!(
                "backend {} is text-only and cannot take an image_ref",
                self.backend_id
            ))),
            _ => Ok(()),
        }
    }
}

/// Decoding settings for one role (answering model or helper LLM), used to
/// stamp out requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub backend_id: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ModelSettings {
    pub fn request(&self, prompt: impl Into<String>) -> ModelRequest {
        ModelRequest::text(&self.backend_id, &self.model_name, prompt)
            .with_temperature(self.temperature)
            .with_max_tokens(self.max_tokens)
            .with_seed(self.seed)
    }
}

/// One candidate token at the first answer position and its probability.
/// Serialized as a `[token, probability]` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "(String, f64)", into = "(String, f64)")]
pub struct TokenProbability {
    pub token: String,
    pub probability: f64,
}

impl From<(String, f64)> for TokenProbability {
    fn from((token, probability): (String, f64)) -> Self {
        TokenProbability { token, probability }
    }
}

impl From<TokenProbability> for (String, f64) {
    fn from(value: TokenProbability) -> Self {
        (value.token, value.probability)
    }
}

impl TokenProbability {
    pub fn new(token: impl Into<String>, probability: f64) -> Self {
        TokenProbability {
            token: token.into(),
            probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_probabilities: Option<Vec<TokenProbability>>,
    #[serde(default)]
    pub latency_ms: u64,
}

impl ModelResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ModelResponse {
            text: text.into(),
            token_probabilities: None,
            latency_ms: 0,
        }
    }
}

/// Failure reported by a backend implementation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Network or server-side failure; worth retrying.
    #[error("transport error: {0}")]
    Transport(String),
    /// The provider rejected the request; retrying will not help.
    #[error("backend refused request: {0}")]
    Refusal(String),
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Produce a completion. `image` carries the resolved image bytes when
    /// [`Backend::needs_image_bytes`] is true and the request has an image.
    fn complete(&self, request: &ModelRequest, image: Option<&[u8]>) -> Result<ModelResponse, BackendError>;

    fn needs_image_bytes(&self) -> bool {
        false
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("image {0} not found in the image store")]
    ImageNotFound(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend refusal: {0}")]
    BackendRefusal(String),
    #[error("cache miss in strict replay mode for key {0}")]
    CacheMissInStrictReplay(CacheKey),
    #[error("cache I/O error: {0}")]
    Cache(#[from] std::io::Error),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 500,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = self.multiplier.powi(retry.saturating_sub(1) as i32);
        Duration::from_millis((self.initial_backoff_ms as f64 * factor).round() as u64)
    }
}

/// Counting semaphore bounding in-flight requests per backend.
struct Limiter {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(permits: usize) -> Self {
        Limiter {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap();
        }
        *permits -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

struct Registered {
    backend: Arc<dyn Backend>,
    limiter: Limiter,
}

/// Call accounting, useful for budget assertions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStats {
    /// Every `query` call, including cache hits and failures.
    pub calls: u64,
    pub cache_hits: u64,
    /// Calls that reached a backend (counted once per logical call, not per retry).
    pub backend_calls: u64,
    pub retries: u64,
    pub per_backend: HashMap<String, u64>,
}

/// Anything that can answer a [`ModelRequest`]; implemented by [`Gateway`]
/// and by the per-example [`Metered`] wrapper.
pub trait ModelClient: Sync {
    fn query(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError>;
}

/// Counts calls and sums reported latency for one unit of work, on top of a
/// shared client.
pub struct Metered<'a> {
    inner: &'a dyn ModelClient,
    calls: AtomicU64,
    latency_ms: AtomicU64,
}

impl<'a> Metered<'a> {
    pub fn new(inner: &'a dyn ModelClient) -> Self {
        Metered {
            inner,
            calls: AtomicU64::new(0),
            latency_ms: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Sum of backend-reported latency over successful calls. Cache hits
    /// report the recorded latency, so this is stable under replay.
    pub fn latency_ms(&self) -> u64 {
        self.latency_ms.load(Ordering::Relaxed)
    }
}

impl ModelClient for Metered<'_> {
    fn query(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let response = self.inner.query(request)?;
        self.latency_ms.fetch_add(response.latency_ms, Ordering::Relaxed);
        Ok(response)
    }
}

impl ModelClient for Gateway {
    fn query(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        Gateway::query(self, request)
    }
}

pub struct Gateway {
    backends: HashMap<String, Registered>,
    cache: Option<ReplayCache>,
    mode: CacheMode,
    images: Option<ImageStore>,
    retry: RetryPolicy,
    stats: Mutex<CallStats>,
}

impl Default for Gateway {
    fn default() -> Self {
        Gateway::new()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Gateway {
            backends: HashMap::new(),
            cache: None,
            mode: CacheMode::Off,
            images: None,
            retry: RetryPolicy::default(),
            stats: Mutex::new(CallStats::default()),
        }
    }

    /// Register a backend with the given per-backend concurrency limit.
    pub fn register(&mut self, id: impl Into<String>, backend: Arc<dyn Backend>, parallelism: usize) {
        self.backends.insert(
            id.into(),
            Registered {
                backend,
                limiter: Limiter::new(parallelism),
            },
        );
    }

    pub fn with_cache(mut self, cache: ReplayCache, mode: CacheMode) -> Self {
        self.cache = Some(cache);
        self.mode = mode;
        self
    }

    pub fn with_images(mut self, images: ImageStore) -> Self {
        self.images = Some(images);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn cache_mode(&self) -> CacheMode {
        self.mode
    }

    pub fn cache(&self) -> Option<&ReplayCache> {
        self.cache.as_ref()
    }

    pub fn backend_kind(&self, id: &str) -> Option<BackendKind> {
        self.backends.get(id).map(|r| r.backend.kind())
    }

    pub fn stats(&self) -> CallStats {
        self.stats.lock().unwrap().clone()
    }

    pub fn reset_stats(&self) {
        *self.stats.lock().unwrap() = CallStats::default();
    }

    pub fn query(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        {
            let mut stats = self.stats.lock().unwrap();
            stats.calls += 1;
            *stats.per_backend.entry(request.backend_id.clone()).or_default() += 1;
        }
        let registered = self
            .backends
            .get(&request.backend_id)
            .ok_or_else(|| GatewayError::UnknownBackend(request.backend_id.clone()))?;
        request.validate(registered.backend.kind())?;

        let key = cache_key(request);
        if self.mode != CacheMode::Off {
            if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
                self.stats.lock().unwrap().cache_hits += 1;
                return Ok(hit);
            }
            if self.mode == CacheMode::ReplayStrict {
                return Err(GatewayError::CacheMissInStrictReplay(key));
            }
        }

        let image_bytes = match (&request.image_ref, registered.backend.needs_image_bytes()) {
            (Some(digest), true) if *digest == digest_bytes(b"") => Some(Vec::new()),
            (Some(digest), true) => {
                let store = self
                    .images
                    .as_ref()
                    .ok_or_else(|| GatewayError::ImageNotFound(digest.to_string()))?;
                Some(
                    store
                        .read(digest)
                        .map_err(|_| GatewayError::ImageNotFound(digest.to_string()))?,
                )
            }
            _ => None,
        };

        self.stats.lock().unwrap().backend_calls += 1;
        let response = self.call_with_retry(registered, request, image_bytes.as_deref())?;

        if self.mode == CacheMode::Record {
            if let Some(cache) = &self.cache {
                cache.insert(key, request, &response)?;
            }
        }
        Ok(response)
    }

    fn call_with_retry(
        &self,
        registered: &Registered,
        request: &ModelRequest,
        image: Option<&[u8]>,
    ) -> Result<ModelResponse, GatewayError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                self.stats.lock().unwrap().retries += 1;
                thread::sleep(self.retry.backoff(attempt - 1));
            }
            let _permit = registered.limiter.acquire();
            match registered.backend.complete(request, image) {
                Ok(response) => return Ok(response),
                Err(BackendError::Refusal(message)) => {
                    return Err(GatewayError::BackendRefusal(message));
                }
                Err(BackendError::Transport(message)) => {
                    log::warn!(
                        "backend {} transport failure (attempt {attempt}/{attempts}): {message}",
                        request.backend_id
                    );
                    last = message;
                }
            }
        }
        Err(GatewayError::Transport {
            attempts,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        failures_left: AtomicU32,
        refuse: bool,
        calls: AtomicU32,
    }

    impl Backend for Flaky {
        fn kind(&self) -> BackendKind {
            BackendKind::Llm
        }

        fn complete(&self, request: &ModelRequest, _: Option<&[u8]>) -> Result<ModelResponse, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.refuse {
                return Err(BackendError::Refusal("content policy".into()));
            }
            if self.failures_left.load(Ordering::SeqCst) > 0 {
                self.failures_left.fetch_sub(1, Ordering::SeqCst);
                return Err(BackendError::Transport("connection reset".into()));
            }
            Ok(ModelResponse {
                text: format!("echo: {}", request.prompt),
                token_probabilities: None,
                latency_ms: 3,
            })
        }
    }

    fn flaky(failures: u32, refuse: bool) -> Arc<Flaky> {
        Arc::new(Flaky {
            failures_left: AtomicU32::new(failures),
            refuse,
            calls: AtomicU32::new(0),
        })
    }

    fn fast_retry(max_attempts: u32) -> RetryPolicy {
        RetryPolicy {
            max_attempts,
            initial_backoff_ms: 1,
            multiplier: 2.0,
        }
    }

    #[test]
    fn default_retry_policy_backs_off_exponentially() {
        let policy = RetryPolicy::default();
        assert_eq!(policy.max_attempts, 3);
        assert_eq!(policy.backoff(1), Duration::from_millis(500));
        assert_eq!(policy.backoff(2), Duration::from_millis(1000));
    }

    #[test]
    fn unknown_backend() {
        let gateway = Gateway::new();
        let err = gateway.query(&ModelRequest::text("nope", "m", "hi")).unwrap_err();
        assert!(matches!(err, GatewayError::UnknownBackend(id) if id == "nope"));
    }

    #[test]
    fn transport_errors_are_retried_up_to_the_cap() {
        let backend = flaky(2, false);
        let mut gateway = Gateway::new().with_retry(fast_retry(3));
        gateway.register("llm", backend.clone(), 1);
        let response = gateway.query(&ModelRequest::text("llm", "m", "hi")).unwrap();
        assert_eq!(response.text, "echo: hi");
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
        assert_eq!(gateway.stats().retries, 2);

        let backend = flaky(5, false);
        let mut gateway = Gateway::new().with_retry(fast_retry(3));
        gateway.register("llm", backend.clone(), 1);
        let err = gateway.query(&ModelRequest::text("llm", "m", "hi")).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }));
        assert!(err.is_retryable());
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn refusals_are_not_retried() {
        let backend = flaky(0, true);
        let mut gateway = Gateway::new().with_retry(fast_retry(3));
        gateway.register("llm", backend.clone(), 1);
        let err = gateway.query(&ModelRequest::text("llm", "m", "hi")).unwrap_err();
        assert!(matches!(err, GatewayError::BackendRefusal(ref m) if m == "content policy"));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn modality_is_enforced() {
        let mut gateway = Gateway::new();
        gateway.register("llm", flaky(0, false), 1);
        let digest = digest_bytes(b"img");
        let err = gateway
            .query(&ModelRequest::text("llm", "m", "hi").with_image(digest))
            .unwrap_err();
        assert!(matches!(err, GatewayError::InvalidRequest(_)));

        let err = gateway
            .query(&ModelRequest::text("llm", "m", "hi").with_temperature(f64::NAN))
            .unwrap_err();
        assert!(matches!(err, GatewayError::InvalidRequest(_)));
    }

    #[test]
    fn limiter_bounds_concurrency() {
        use std::sync::atomic::AtomicUsize;

        struct Slow {
            in_flight: AtomicUsize,
            peak: AtomicUsize,
        }
        impl Backend for Slow {
            fn kind(&self) -> BackendKind {
                BackendKind::Llm
            }
            fn complete(&self, _: &ModelRequest, _: Option<&[u8]>) -> Result<ModelResponse, BackendError> {
                let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                thread::sleep(Duration::from_millis(5));
                self.in_flight.fetch_sub(1, Ordering::SeqCst);
                Ok(ModelResponse::text("ok"))
            }
        }

        let slow = Arc::new(Slow {
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let mut gateway = Gateway::new();
        gateway.register("llm", slow.clone(), 2);
        thread::scope(|scope| {
            for i in 0..8 {
                let gateway = &gateway;
                scope.spawn(move || {
                    gateway.query(&ModelRequest::text("llm", "m", format!("p{i}"))).unwrap();
                });
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(gateway.stats().calls, 8);
    }
}
