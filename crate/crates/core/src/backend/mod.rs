//! Model access: one `Completion` engine per backend, plus the role
//! functions (answer sampling, distractor generation, option expansion,
//! equivalence judgment) built on top of rendered prompts.

mod cache;
mod extract;
mod http;
pub mod prompts;
mod roles;
mod synthetic;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CacheParams, CacheRecord, CachedCompletion, ReplayCache};
pub use extract::{extract_json_object, extract_label, extract_tag, parse_verdict, strip_option_prefix, Verdict};
pub use http::ChatCompletionsClient;
pub(crate) use roles::validate_distractor_reply;
pub use roles::{AnswerSample, GenerationMode, GenerationResult, RewriteDecision};
pub use synthetic::{SyntheticOracle, SyntheticOracleSpec};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("endpoint unreachable after {attempts} attempts: {message}")]
    Unreachable { attempts: u32, message: String },

    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("backend configuration error: {0}")]
    Config(String),

    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error("replay cache has no response for key {key}")]
    ReplayMiss { key: String },

    #[error("no valid response after {attempts} attempts ({reason}); last response: {last_response}")]
    GenerationExhausted {
        attempts: u32,
        last_response: String,
        reason: String,
    },
}

/// Decoding parameters sent with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub sample_index: u32,
    pub seed: u64,
}

/// Turns a rendered prompt into raw model text.
pub trait Completion: Send + Sync {
    fn complete(&self, params: &SamplingParams, request: &CompletionRequest<'_>) -> Result<String, BackendError>;
}

fn default_temperature() -> f64 {
    0.7
}

fn default_top_p() -> f64 {
    1.0
}

fn default_max_tokens() -> u32 {
    2048
}

fn default_timeout_secs() -> f64 {
    120.0
}

fn default_max_retries() -> u32 {
    3
}

/// Where a backend's responses come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Endpoint {
    Http(String),
    Synthetic,
    Replay(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// An http(s) URL, `synthetic`, or `replay:<cache path>`.
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// JSON file with a `SyntheticOracleSpec`, for the synthetic endpoint.
    #[serde(default)]
    pub synthetic_spec: Option<PathBuf>,
}

impl BackendConfig {
    pub fn synthetic(model_name: impl Into<String>) -> Self {
        BackendConfig {
            endpoint_url: "synthetic".into(),
            model_name: model_name.into(),
            temperature: default_temperature(),
            top_p: default_top_p(),
            max_tokens: default_max_tokens(),
            api_key_env: None,
            request_timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            synthetic_spec: None,
        }
    }

    pub fn endpoint(&self) -> Result<Endpoint, BackendError> {
        let url = self.endpoint_url.trim();
        if url == "synthetic" {
            Ok(Endpoint::Synthetic)
        } else if let Some(path) = url.strip_prefix("replay:") {
            if path.is_empty() {
                return Err(BackendError::Config("replay endpoint needs a cache path".into()));
            }
            Ok(Endpoint::Replay(PathBuf::from(path)))
        } else if url.starts_with("http://") || url.starts_with("https://") {
            Ok(Endpoint::Http(url.to_string()))
        } else {
            Err(BackendError::Config(format!(
                "endpoint_url must be an http(s) URL, \"synthetic\" or \"replay:<path>\", got {url:?}"
            )))
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        self.endpoint()?;
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::Config(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::Config("max_tokens must be positive".into()));
        }
        if !(self.request_timeout_secs.is_finite() && self.request_timeout_secs > 0.0) {
            return Err(BackendError::Config("request_timeout_secs must be positive".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(BackendError::Config("model_name is empty".into()));
        }
        Ok(())
    }

    pub fn sampling_params(&self) -> SamplingParams {
        SamplingParams {
            model_name: self.model_name.clone(),
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
        }
    }
}

/// A configured model: sampling parameters plus the engine that answers.
#[derive(Clone)]
pub struct Backend {
    params: SamplingParams,
    engine: Arc<dyn Completion>,
    max_retries: u32,
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend")
            .field("params", &self.params)
            .field("max_retries", &self.max_retries)
            .finish_non_exhaustive()
    }
}

impl Backend {
    pub fn new(params: SamplingParams, engine: Arc<dyn Completion>, max_retries: u32) -> Self {
        Backend {
            params,
            engine,
            max_retries,
        }
    }

    /// A synthetic oracle backend, mainly for tests.
    pub fn synthetic(spec: SyntheticOracleSpec, params: SamplingParams) -> Result<Self, BackendError> {
        Ok(Backend::new(
            params,
            Arc::new(SyntheticOracle::new(spec)?),
            default_max_retries(),
        ))
    }

    /// Builds the engine described by `config`. When `cache` is given, live
    /// responses are recorded to it and served from it on later runs.
    pub fn from_config(config: &BackendConfig, cache: Option<Arc<ReplayCache>>) -> Result<Self, BackendError> {
        config.validate()?;
        let engine: Arc<dyn Completion> = match config.endpoint()? {
            Endpoint::Replay(path) => {
                let replay = Arc::new(ReplayCache::open_read_only(&path)?);
                return Ok(Backend::new(
                    config.sampling_params(),
                    Arc::new(CachedCompletion::replay_only(replay)),
                    config.max_retries,
                ));
            }
            Endpoint::Synthetic => {
                let spec = match &config.synthetic_spec {
                    Some(path) => {
                        let text = std::fs::read_to_string(path)
                            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
                        serde_json::from_str(&text)
                            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?
                    }
                    None => SyntheticOracleSpec::default(),
                };
                Arc::new(SyntheticOracle::new(spec)?)
            }
            Endpoint::Http(url) => {
                let api_key = match &config.api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| BackendError::MissingApiKey(var.clone()))?),
                    None => None,
                };
                Arc::new(ChatCompletionsClient::new(
                    &url,
                    api_key,
                    Duration::from_secs_f64(config.request_timeout_secs),
                    config.max_retries,
                )?)
            }
        };
        let engine: Arc<dyn Completion> = match cache {
            Some(cache) => Arc::new(CachedCompletion::new(engine, cache)),
            None => engine,
        };
        Ok(Backend::new(config.sampling_params(), engine, config.max_retries))
    }

    pub fn params(&self) -> &SamplingParams {
        &self.params
    }

    pub fn max_retries(&self) -> u32 {
        self.max_retries
    }

    pub fn with_max_retries(mut self, max_retries: u32) -> Self {
        self.max_retries = max_retries;
        self
    }

    /// Same engine with greedy decoding, used for judgments.
    pub fn greedy(&self) -> Backend {
        let mut params = self.params.clone();
        params.temperature = 0.0;
        Backend {
            params,
            engine: self.engine.clone(),
            max_retries: self.max_retries,
        }
    }

    pub fn complete(&self, prompt: &str, sample_index: u32, seed: u64) -> Result<String, BackendError> {
        self.engine.complete(
            &self.params,
            &CompletionRequest {
                prompt,
                sample_index,
                seed,
            },
        )
    }
}
