//! Chat-completions HTTP client with retry and an in-flight bound.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, CompletionResult, GatewayError, GenerationConfig};
use crate::prompt::PromptText;

pub const API_KEY_ENV: &str = "LLM_API_KEY";
pub const BASE_URL_ENV: &str = "LLM_BASE_URL";

const BODY_EXCERPT: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Endpoint root; requests go to `<base_url>/chat/completions`.
    pub base_url: String,
    pub timeout_secs: u64,
    /// Total attempts per call, including the first.
    pub max_attempts: u32,
    pub max_in_flight: usize,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    /// Jitter as a fraction of the nominal delay.
    pub jitter: f64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".to_string(),
            timeout_secs: 30,
            max_attempts: 5,
            max_in_flight: 8,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
            jitter: 0.25,
        }
    }
}

/// Delay before retry number `attempt` (1-based): `base * 2^(attempt-1)`,
/// capped, then stretched by `jitter * unit` with `unit` in `[0, 1)`.
pub fn backoff_delay(cfg: &RemoteConfig, attempt: u32, unit: f64) -> Duration {
    let exp = attempt.saturating_sub(1).min(32);
    let nominal = cfg.backoff_base_ms.saturating_mul(1u64 << exp).min(cfg.backoff_max_ms);
    let jitter = (nominal as f64 * cfg.jitter * unit.clamp(0.0, 1.0)).round() as u64;
    Duration::from_millis(nominal + jitter)
}

/// Request body: a single user message carrying the rendered prompt.
pub fn chat_request_body(prompt: &PromptText, config: &GenerationConfig) -> Value {
    json!({
        "model": config.model_name,
        "messages": [{"role": "user", "content": prompt.rendered}],
        "max_tokens": config.max_tokens,
        "top_p": config.top_p,
        "temperature": config.temperature,
        "frequency_penalty": config.frequency_penalty,
    })
}

fn excerpt(body: &str) -> String {
    body.chars().take(BODY_EXCERPT).collect()
}

/// Extracts `choices[0].message.content`, naming the first missing field.
pub fn parse_chat_response(body: &str) -> Result<String, GatewayError> {
    let schema = |field: &str| GatewayError::Schema {
        field: field.to_string(),
        body: excerpt(body),
    };
    let v: Value = serde_json::from_str(body).map_err(|_| schema("<json body>"))?;
    let choices = v.get("choices").ok_or_else(|| schema("choices"))?;
    let first = choices
        .as_array()
        .ok_or_else(|| schema("choices"))?
        .first()
        .ok_or_else(|| schema("choices[0]"))?;
    let message = first.get("message").ok_or_else(|| schema("choices[0].message"))?;
    message
        .get("content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| schema("choices[0].message.content"))
}

#[derive(Debug, Default)]
struct InFlightGate {
    count: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a InFlightGate);

impl InFlightGate {
    fn acquire(&self, limit: usize) -> Permit<'_> {
        let mut n = self.count.lock().unwrap();
        while *n >= limit {
            n = self.cv.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().unwrap() -= 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteBackend {
    cfg: RemoteConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    gate: InFlightGate,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl RemoteBackend {
    /// Fails before any network activity when the credential is missing.
    pub fn new(cfg: RemoteConfig, api_key: Option<String>) -> Result<Self, GatewayError> {
        let api_key = api_key
            .filter(|k| !k.trim().is_empty())
            .ok_or(GatewayError::MissingCredential(API_KEY_ENV))?;
        if cfg.max_attempts == 0 || cfg.max_in_flight == 0 {
            return Err(GatewayError::Config("max_attempts and max_in_flight must be >= 1".into()));
        }
        if cfg.base_url.trim().is_empty() {
            return Err(GatewayError::Config("base_url is empty".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            cfg,
            api_key,
            client,
            gate: InFlightGate::default(),
        })
    }

    /// Reads the credential from `LLM_API_KEY`.
    pub fn from_env(cfg: RemoteConfig) -> Result<Self, GatewayError> {
        Self::new(cfg, std::env::var(API_KEY_ENV).ok())
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &Value, attempts: u32) -> Result<String, GatewayError> {
        let _permit = self.gate.acquire(self.cfg.max_in_flight);
        let resp = self
            .client
            .post(self.endpoint())
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| GatewayError::Network { attempts, message: e.to_string() })?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| GatewayError::Network { attempts, message: e.to_string() })?;
        if !status.is_success() {
            return Err(GatewayError::Status {
                status: status.as_u16(),
                attempts,
                body: excerpt(&text),
            });
        }
        parse_chat_response(&text)
    }
}

impl Backend for RemoteBackend {
    fn name(&self) -> String {
        "remote".to_string()
    }

    fn complete(&self, prompt: &PromptText, config: &GenerationConfig, _call_seed: u64) -> Result<CompletionResult, GatewayError> {
        if prompt.rendered.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let body = chat_request_body(prompt, config);
        let start = Instant::now();
        let mut attempt = 1;
        loop {
            match self.attempt(&body, attempt) {
                Ok(raw_text) => {
                    return Ok(CompletionResult {
                        raw_text,
                        backend_name: format!("remote:{}", config.model_name),
                        latency_ms: start.elapsed().as_millis() as u64,
                        attempt_count: attempt,
                    })
                }
                Err(e) if e.is_retryable() && attempt < self.cfg.max_attempts => {
                    std::thread::sleep(backoff_delay(&self.cfg, attempt, rand::random::<f64>()));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PromptMetadata;

    #[test]
    fn missing_key_is_config_error() {
        assert!(matches!(
            RemoteBackend::new(RemoteConfig::default(), None),
            Err(GatewayError::MissingCredential(API_KEY_ENV))
        ));
        assert!(RemoteBackend::new(RemoteConfig::default(), Some("  ".into())).is_err());
    }

    #[test]
    fn backoff_doubles_with_bounded_jitter() {
        let cfg = RemoteConfig { backoff_base_ms: 100, backoff_max_ms: 10_000, jitter: 0.5, ..Default::default() };
        assert_eq!(backoff_delay(&cfg, 1, 0.0), Duration::from_millis(100));
        assert_eq!(backoff_delay(&cfg, 2, 0.0), Duration::from_millis(200));
        assert_eq!(backoff_delay(&cfg, 4, 0.0), Duration::from_millis(800));
        assert!(backoff_delay(&cfg, 3, 0.999) <= Duration::from_millis(600));
        assert_eq!(backoff_delay(&cfg, 30, 0.0), Duration::from_millis(10_000));
    }

    #[test]
    fn request_body_fields() {
        let p = PromptText::new("make data", PromptMetadata::default());
        let body = chat_request_body(&p, &GenerationConfig::default());
        assert_eq!(body["messages"][0]["content"], "make data");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"].as_array().unwrap().len(), 1);
        assert_eq!(body["max_tokens"], 500);
        assert_eq!(body["temperature"], 1.2);
        assert_eq!(body["frequency_penalty"], 0.02);
        assert_eq!(body["top_p"], 1.0);
    }

    #[test]
    fn response_parsing_names_missing_field() {
        assert_eq!(
            parse_chat_response(r#"{"choices":[{"message":{"content":"1. a"}}]}"#).unwrap(),
            "1. a"
        );
        let field = |b: &str| match parse_chat_response(b) {
            Err(GatewayError::Schema { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field(r#"{"id":"x"}"#), "choices");
        assert_eq!(field(r#"{"choices":[]}"#), "choices[0]");
        assert_eq!(field(r#"{"choices":[{"text":"a"}]}"#), "choices[0].message");
        assert_eq!(field(r#"{"choices":[{"message":{"role":"assistant"}}]}"#), "choices[0].message.content");
        assert_eq!(field("not json"), "<json body>");
    }
}
