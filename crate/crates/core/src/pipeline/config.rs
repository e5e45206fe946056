use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::confidence::{Aggregator, Estimator};
use crate::gateway::{
    CacheMode, Gateway, HttpBackend, HttpBackendConfig, ImageStore, MockScript, ModelSettings, ReplayCache,
    ScriptedBackend,
};
use crate::querygen::Exemplars;
use crate::reformulation::DEFAULT_PARAPHRASES;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("environment variable `{0}` referenced in config is not set")]
    MissingEnv(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> ConfigError + '_ {
    move |source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mllm_backend: String,
    pub mllm_model: String,
    pub llm_backend: String,
    pub llm_model: String,
    pub n_paraphrases: usize,
    /// Also ask the MLLM the unparaphrased atomic query, as the first sample.
    pub include_original: bool,
    pub estimator: Estimator,
    pub aggregator: Aggregator,
    /// Minimum confidence for an atomic answer to enter the refinement context.
    pub context_threshold: f64,
    pub mllm_temperature: f64,
    pub mllm_max_tokens: u32,
    pub llm_temperature: f64,
    pub llm_max_tokens: u32,
    pub seed: Option<u64>,
    /// Examples processed concurrently.
    pub parallelism: usize,
    pub cache_mode: CacheMode,
    /// Use an example's precomputed `initial_answer` instead of calling the MLLM.
    pub use_provided_initial_answers: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mllm_backend: "mllm".into(),
            mllm_model: "mllm".into(),
            llm_backend: "llm".into(),
            llm_model: "llm".into(),
            n_paraphrases: DEFAULT_PARAPHRASES,
            include_original: false,
            estimator: Estimator::SelfConsistency,
            aggregator: Aggregator::Mean,
            context_threshold: 0.0,
            mllm_temperature: 0.6,
            mllm_max_tokens: 1024,
            llm_temperature: 0.0,
            llm_max_tokens: 1000,
            seed: None,
            parallelism: 1,
            cache_mode: CacheMode::Record,
            use_provided_initial_answers: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.n_paraphrases == 0 {
            return fail("n_paraphrases must be at least 1");
        }
        if self.parallelism == 0 {
            return fail("parallelism must be at least 1");
        }
        for t in [self.mllm_temperature, self.llm_temperature] {
            if !t.is_finite() || !(0.0..=2.0).contains(&t) {
                return fail("temperatures must lie in [0, 2]");
            }
        }
        if !(0.0..=1.0).contains(&self.context_threshold) {
            return fail("context_threshold must lie in [0, 1]");
        }
        if self.mllm_max_tokens == 0 || self.llm_max_tokens == 0 {
            return fail("max token limits must be positive");
        }
        Ok(())
    }

    pub fn mllm(&self) -> ModelSettings {
        ModelSettings {
            backend_id: self.mllm_backend.clone(),
            model_name: self.mllm_model.clone(),
            temperature: self.mllm_temperature,
            max_tokens: self.mllm_max_tokens,
            seed: self.seed,
        }
    }

    pub fn llm(&self) -> ModelSettings {
        ModelSettings {
            backend_id: self.llm_backend.clone(),
            model_name: self.llm_model.clone(),
            temperature: self.llm_temperature,
            max_tokens: self.llm_max_tokens,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptSource {
    Path(PathBuf),
    Inline(MockScript),
}

fn default_backend_parallelism() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendSpec {
    Mock {
        script: ScriptSource,
        #[serde(default = "default_backend_parallelism")]
        parallelism: usize,
    },
    Http {
        #[serde(flatten)]
        config: HttpBackendConfig,
        #[serde(default = "default_backend_parallelism")]
        parallelism: usize,
    },
}

/// The JSON config file. Relative paths are resolved against the file's
/// directory; `${NAME}` inside any string is replaced by the environment
/// variable `NAME`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub backends: BTreeMap<String, BackendSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplars: Option<PathBuf>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

/// Replace every `${NAME}` in the string leaves of `value`.
pub fn interpolate_env(value: &mut Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
    static PATTERN: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let pattern = PATTERN.get_or_init(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap());
    match value {
        Value::String(s) => {
            if !pattern.is_match(s) {
                return Ok(());
            }
            let mut missing = None;
            let replaced = pattern.replace_all(s, |caps: &regex::Captures| {
                lookup(&caps[1]).unwrap_or_else(|| {
                    missing.get_or_insert_with(|| caps[1].to_string());
                    String::new()
                })
            });
            if let Some(name) = missing {
                return Err(ConfigError::MissingEnv(name));
            }
            *s = replaced.into_owned();
        }
        Value::Array(items) => {
            for item in items {
                interpolate_env(item, lookup)?;
            }
        }
        Value::Object(map) => {
            for item in map.values_mut() {
                interpolate_env(item, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl RunConfig {
    pub fn from_json(raw: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut value: Value = serde_json::from_str(raw)?;
        interpolate_env(&mut value, &|name| std::env::var(name).ok())?;
        let mut config: RunConfig = serde_json::from_value(value)?;
        if config.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::Invalid(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        for p in [&mut config.cache_path, &mut config.image_dir, &mut config.exemplars]
            .into_iter()
            .flatten()
        {
            resolve(base_dir, p);
        }
        for spec in config.backends.values_mut() {
            if let BackendSpec::Mock {
                script: ScriptSource::Path(p),
                ..
            } = spec
            {
                resolve(base_dir, p);
            }
        }
        config.pipeline.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(io_error(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_json(&raw, base)
    }

    pub fn exemplars(&self) -> Result<Exemplars, ConfigError> {
        match &self.exemplars {
            Some(p) => Exemplars::load(p).map_err(io_error(p)),
            None => Ok(Exemplars::bundled()),
        }
    }

    /// Register every backend and attach the cache and image store.
    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let mut gateway = Gateway::new();
        for (id, spec) in &self.backends {
            match spec {
                BackendSpec::Mock { script, parallelism } => {
                    let script = match script {
                        ScriptSource::Inline(s) => s.clone(),
                        ScriptSource::Path(p) => MockScript::load(p).map_err(io_error(p))?,
                    };
                    gateway.register(id.clone(), Arc::new(ScriptedBackend::new(script)), *parallelism);
                }
                BackendSpec::Http { config, parallelism } => {
                    let backend = HttpBackend::new(config.clone())
                        .map_err(|e| ConfigError::Invalid(format!("backend `{id}`: {e}")))?;
                    gateway.register(id.clone(), Arc::new(backend), *parallelism);
                }
            }
        }
        for id in [&self.pipeline.mllm_backend, &self.pipeline.llm_backend] {
            if !self.backends.contains_key(id) {
                return Err(ConfigError::Invalid(format!(
                    "pipeline refers to unknown backend `{id}`"
                )));
            }
        }
        let mode = self.pipeline.cache_mode;
        let cache = match (&self.cache_path, mode) {
            (_, CacheMode::Off) | (None, _) => None,
            (Some(p), _) => Some(ReplayCache::open(p).map_err(io_error(p))?),
        };
        if let Some(cache) = cache {
            gateway = gateway.with_cache(cache, mode);
        } else if mode == CacheMode::ReplayStrict {
            // strict replay without a cache file can only miss
            gateway = gateway.with_cache(ReplayCache::in_memory(), mode);
        }
        if let Some(dir) = &self.image_dir {
            gateway = gateway.with_images(ImageStore::from_dir(dir).map_err(io_error(dir))?);
        }
        Ok(gateway)
    }
}
