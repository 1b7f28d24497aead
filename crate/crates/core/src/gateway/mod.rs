//! Completion gateway over hosted, local and scripted language models.
//!
//! Every call goes through [`LlmGateway::complete`], which consults a
//! content-addressed response cache keyed by `(model_id, temperature,
//! prompt)`, applies a per-provider token bucket, retries transient
//! failures with exponential backoff and records token usage per run.

mod cache;
mod mock;
mod openai;
mod usage;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheEntry, ResponseCache};
pub use mock::{Matcher, MockRule, MockScript};
pub use usage::{ModelPrice, ModelUsage, PriceTable, UsageLedger, UsageRecord, UsageReport};

use crate::sync::{Backoff, TokenBucket};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    OpenaiCompatible,
    Local,
    ScriptedMock,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_max_output_tokens() -> u32 {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    pub provider: Provider,
    /// Chat-completions base URL, e.g. `https://api.openai.com/v1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    /// Environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests_per_minute: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<MockScript>,
}

impl ModelConfig {
    pub fn scripted(model_id: &str, script: MockScript) -> Self {
        Self {
            model_id: model_id.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: default_max_output_tokens(),
            provider: Provider::ScriptedMock,
            base_url: None,
            api_key_env: None,
            requests_per_minute: None,
            script: Some(script),
        }
    }

    pub fn openai(model_id: &str) -> Self {
        Self {
            model_id: model_id.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: default_max_output_tokens(),
            provider: Provider::OpenaiCompatible,
            base_url: None,
            api_key_env: None,
            requests_per_minute: None,
            script: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidConfig(format!(
                "{}: temperature must be a finite value >= 0",
                self.model_id
            )));
        }
        if self.model_id.is_empty() {
            return Err(GatewayError::InvalidConfig("empty model_id".into()));
        }
        if self.provider == Provider::ScriptedMock && self.script.is_none() {
            return Err(GatewayError::InvalidConfig(format!("{}: scripted_mock needs a script", self.model_id)));
        }
        Ok(())
    }

    /// The credential variable consulted for this model, if any.
    pub fn credential_var(&self) -> Option<&str> {
        match self.provider {
            Provider::OpenaiCompatible => Some(self.api_key_env.as_deref().unwrap_or("OPENAI_API_KEY")),
            Provider::Local => self.api_key_env.as_deref(),
            Provider::ScriptedMock => None,
        }
    }

    pub fn endpoint_url(&self) -> String {
        let base = match (self.provider, &self.base_url) {
            (_, Some(url)) => url.trim_end_matches('/').to_string(),
            (Provider::Local, None) => "http://localhost:11434/v1".into(),
            _ => "https://api.openai.com/v1".into(),
        };
        format!("{base}/chat/completions")
    }
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cached: bool,
    /// Zero for cache replays.
    #[serde(with = "duration_ms", rename = "latency_ms")]
    pub latency: Duration,
    pub request_hash: String,
}

#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    #[error("rate limited by {model_id} after {attempts} attempt(s)")]
    RateLimited { model_id: String, attempts: u32 },
    #[error("provider error from {model_id}: {message}")]
    ProviderError { model_id: String, message: String },
    #[error("credential variable {var} is not set for {model_id}")]
    AuthMissing { model_id: String, var: String },
    #[error("prompt text is empty")]
    EmptyPrompt,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("cache I/O failed: {0}")]
    Cache(String),
}

/// What a provider returns for one successful call.
#[derive(Debug, Clone)]
pub struct RawCompletion {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub raw: serde_json::Value,
}

#[derive(Debug, Clone)]
pub enum ProviderFailure {
    /// 429 or equivalent; retried.
    RateLimited(String),
    /// Network error or 5xx; retried.
    Transient(String),
    Fatal(String),
}

/// Digest identifying one request: SHA-256 over the JSON array
/// `[model_id, temperature, prompt_text]`.
pub fn request_hash(model_id: &str, temperature: f64, prompt: &str) -> String {
    let payload = serde_json::json!([model_id, temperature, prompt]);
    crate::fsutil::sha256_hex(payload.to_string())
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff: Backoff,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 4,
            backoff: Backoff {
                base: Duration::from_millis(500),
                max: Duration::from_secs(30),
            },
        }
    }
}

pub struct LlmGateway {
    cache: ResponseCache,
    usage: UsageLedger,
    retry: RetryPolicy,
    limiters: Mutex<HashMap<String, Arc<TokenBucket>>>,
    http: openai::ChatClient,
    current_run: RwLock<Option<String>>,
}

impl LlmGateway {
    /// Gateway with an in-memory cache only.
    pub fn in_memory() -> Self {
        Self::with_cache(ResponseCache::in_memory())
    }

    /// Gateway persisting responses under `dir`.
    pub fn with_cache_dir(dir: impl Into<PathBuf>) -> Self {
        Self::with_cache(ResponseCache::on_disk(dir.into()))
    }

    fn with_cache(cache: ResponseCache) -> Self {
        Self {
            cache,
            usage: UsageLedger::default(),
            retry: RetryPolicy::default(),
            limiters: Mutex::new(HashMap::new()),
            http: openai::ChatClient::new(),
            current_run: RwLock::new(None),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Subsequent calls are accounted to `run_id`.
    pub fn begin_run(&self, run_id: &str) {
        self.usage.register(run_id);
        *self.current_run.write().unwrap_or_else(|e| e.into_inner()) = Some(run_id.to_string());
    }

    pub fn usage_report(&self, run_id: &str, prices: &PriceTable) -> Result<UsageReport, GatewayError> {
        self.usage.report(run_id, prices)
    }

    /// Fails with `AuthMissing` when the model's credential variable is unset.
    pub fn preflight(&self, config: &ModelConfig) -> Result<(), GatewayError> {
        config.validate()?;
        if let Some(var) = config.credential_var() {
            if std::env::var(var).map(|v| v.trim().is_empty()).unwrap_or(true) {
                return Err(GatewayError::AuthMissing {
                    model_id: config.model_id.clone(),
                    var: var.to_string(),
                });
            }
        }
        Ok(())
    }

    fn limiter(&self, config: &ModelConfig) -> Option<Arc<TokenBucket>> {
        let rpm = config.requests_per_minute?;
        let key = format!("{:?}|{}", config.provider, config.endpoint_url());
        let mut map = self.limiters.lock().unwrap_or_else(|e| e.into_inner());
        Some(map.entry(key).or_insert_with(|| Arc::new(TokenBucket::per_minute(rpm))).clone())
    }

    pub fn complete(&self, config: &ModelConfig, prompt: &str) -> Result<Completion, GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        config.validate()?;
        let hash = request_hash(&config.model_id, config.temperature, prompt);
        if let Some(entry) = self.cache.get(&hash)? {
            self.record(config, entry.input_tokens, entry.output_tokens, true);
            return Ok(Completion {
                text: entry.text,
                input_tokens: entry.input_tokens,
                output_tokens: entry.output_tokens,
                cached: true,
                latency: Duration::ZERO,
                request_hash: hash,
            });
        }
        self.preflight(config)?;
        if let Some(bucket) = self.limiter(config) {
            bucket.acquire();
        }
        let started = Instant::now();
        let raw = self.call_with_retries(config, prompt)?;
        let latency = started.elapsed();
        self.cache.put(CacheEntry {
            request_hash: hash.clone(),
            model_id: config.model_id.clone(),
            temperature: config.temperature,
            prompt: prompt.to_string(),
            text: raw.text.clone(),
            input_tokens: raw.input_tokens,
            output_tokens: raw.output_tokens,
            raw_response: raw.raw,
            created_at: chrono::Utc::now(),
        })?;
        self.record(config, raw.input_tokens, raw.output_tokens, false);
        Ok(Completion {
            text: raw.text,
            input_tokens: raw.input_tokens,
            output_tokens: raw.output_tokens,
            cached: false,
            latency,
            request_hash: hash,
        })
    }

    fn record(&self, config: &ModelConfig, input_tokens: u64, output_tokens: u64, cached: bool) {
        let run = self.current_run.read().unwrap_or_else(|e| e.into_inner()).clone();
        if let Some(run) = run {
            self.usage.record(
                &run,
                UsageRecord {
                    model_id: config.model_id.clone(),
                    input_tokens,
                    output_tokens,
                    cached,
                },
            );
        }
    }

    fn call_once(&self, config: &ModelConfig, prompt: &str) -> Result<RawCompletion, ProviderFailure> {
        match config.provider {
            Provider::ScriptedMock => {
                let script = config.script.as_ref().ok_or_else(|| ProviderFailure::Fatal("no script".into()))?;
                script.respond(prompt)
            }
            Provider::OpenaiCompatible | Provider::Local => {
                let key = config.credential_var().and_then(|v| std::env::var(v).ok());
                self.http.chat(config, prompt, key.as_deref())
            }
        }
    }

    fn call_with_retries(&self, config: &ModelConfig, prompt: &str) -> Result<RawCompletion, GatewayError> {
        let mut attempt = 0;
        loop {
            let failure = match self.call_once(config, prompt) {
                Ok(raw) => return Ok(raw),
                Err(f) => f,
            };
            let exhausted = attempt >= self.retry.max_retries;
            match failure {
                ProviderFailure::Fatal(message) => {
                    return Err(GatewayError::ProviderError {
                        model_id: config.model_id.clone(),
                        message,
                    })
                }
                ProviderFailure::RateLimited(_) if exhausted => {
                    return Err(GatewayError::RateLimited {
                        model_id: config.model_id.clone(),
                        attempts: attempt + 1,
                    })
                }
                ProviderFailure::Transient(message) if exhausted => {
                    return Err(GatewayError::ProviderError {
                        model_id: config.model_id.clone(),
                        message: format!("{message} (after {} attempts)", attempt + 1),
                    })
                }
                ProviderFailure::RateLimited(m) | ProviderFailure::Transient(m) => {
                    let delay = self.retry.backoff.delay(attempt);
                    warn!("{}: {m}; retrying in {delay:?}", config.model_id);
                    std::thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}

/// Rough whitespace token count used where a provider reports none.
pub fn approximate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock(reply: &str) -> ModelConfig {
        ModelConfig::scripted("mock", MockScript::new().rule("*", reply))
    }

    #[test]
    fn scripted_mock_replies() {
        let gw = LlmGateway::in_memory();
        let c = gw.complete(&mock("positive"), "Is it?").unwrap();
        assert_eq!(c.text, "positive");
        assert!(!c.cached);
    }

    #[test]
    fn second_identical_call_is_cached() {
        let gw = LlmGateway::in_memory();
        let cfg = mock("positive");
        let a = gw.complete(&cfg, "Is it?").unwrap();
        let b = gw.complete(&cfg, "Is it?").unwrap();
        assert!(b.cached);
        assert_eq!(a.text, b.text);
        assert_eq!(b.latency, Duration::ZERO);
        assert_eq!(a.request_hash, b.request_hash);
    }

    #[test]
    fn cache_key_covers_temperature_and_model() {
        let a = request_hash("m", 0.1, "p");
        assert_ne!(a, request_hash("m", 0.2, "p"));
        assert_ne!(a, request_hash("n", 0.1, "p"));
        assert_ne!(a, request_hash("m", 0.1, "q"));
        assert_eq!(a, request_hash("m", 0.1, "p"));
    }

    #[test]
    fn missing_credentials_fail_before_network() {
        let gw = LlmGateway::in_memory();
        let mut cfg = ModelConfig::openai("gpt-test");
        cfg.api_key_env = Some("KGAUDIT_TEST_SURELY_UNSET_KEY".into());
        cfg.base_url = Some("http://127.0.0.1:9".into());
        let err = gw.complete(&cfg, "hello").unwrap_err();
        assert!(matches!(err, GatewayError::AuthMissing { ref var, .. } if var == "KGAUDIT_TEST_SURELY_UNSET_KEY"));
    }

    #[test]
    fn empty_prompt_and_negative_temperature_rejected() {
        let gw = LlmGateway::in_memory();
        assert!(matches!(gw.complete(&mock("x"), "  "), Err(GatewayError::EmptyPrompt)));
        let mut cfg = mock("x");
        cfg.temperature = -0.5;
        assert!(matches!(gw.complete(&cfg, "p"), Err(GatewayError::InvalidConfig(_))));
    }

    #[test]
    fn transient_failures_exhaust_retries() {
        let gw = LlmGateway::in_memory().with_retry(RetryPolicy {
            max_retries: 2,
            backoff: Backoff {
                base: Duration::from_millis(1),
                max: Duration::from_millis(1),
            },
        });
        let cfg = ModelConfig::scripted("mock", MockScript::new().rate_limit("*"));
        assert!(matches!(
            gw.complete(&cfg, "p"),
            Err(GatewayError::RateLimited { attempts: 3, .. })
        ));
        let cfg = ModelConfig::scripted("mock", MockScript::new().fail("*", "boom"));
        assert!(matches!(gw.complete(&cfg, "p"), Err(GatewayError::ProviderError { .. })));
    }

    #[test]
    fn usage_is_accounted_per_run() {
        let gw = LlmGateway::in_memory();
        gw.begin_run("r1");
        gw.complete(&mock("one two"), "a b c").unwrap();
        gw.complete(&mock("one two"), "a b c").unwrap();
        let report = gw.usage_report("r1", &PriceTable::default()).unwrap();
        let m = &report.per_model["mock"];
        assert_eq!(m.calls, 2);
        assert_eq!(m.cached_calls, 1);
        assert_eq!(m.input_tokens, 3);
        assert_eq!(m.output_tokens, 2);
        assert!(matches!(gw.usage_report("nope", &PriceTable::default()), Err(GatewayError::UnknownRun(_))));
    }

    #[test]
    fn model_config_defaults_from_toml() {
        let cfg: ModelConfig = toml::from_str("model_id = \"gpt-4-0125-preview\"\nprovider = \"openai_compatible\"").unwrap();
        assert_eq!(cfg.temperature, 0.1);
        assert_eq!(cfg.credential_var(), Some("OPENAI_API_KEY"));
        assert_eq!(cfg.endpoint_url(), "https://api.openai.com/v1/chat/completions");
    }
}
