//! Text-generation backends.
//!
//! Every backend implements [`Backend`]. [`MockBackend`] is a seeded,
//! offline generator with planted per-label vocabularies; [`RemoteBackend`]
//! speaks the chat-completions wire format over HTTP. [`CachedBackend`]
//! wraps either and persists responses so interrupted runs can resume.

mod cache;
mod mock;
mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::hex_digest;
use crate::prompt::PromptText;

pub use cache::{CachedBackend, ResponseCache};
pub use mock::{mock_generate, MockBackend, MockProfile, NoiseMode, PlantedOptions};
pub use remote::{backoff_delay, chat_request_body, parse_chat_response, RemoteBackend, RemoteConfig, API_KEY_ENV, BASE_URL_ENV};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing API credential: set {0}")]
    MissingCredential(&'static str),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("network failure after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("HTTP {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, attempts: u32, body: String },
    #[error("unexpected response schema: missing or invalid field `{field}`")]
    Schema { field: String, body: String },
    #[error("response cache: {0}")]
    Cache(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Network { .. } => true,
            GatewayError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Decoding parameters and batching for a generation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub max_tokens: u32,
    pub top_p: f64,
    pub temperature: f64,
    pub frequency_penalty: f64,
    /// Items requested per completion.
    pub items_per_call: usize,
    pub model_name: String,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            max_tokens: 500,
            top_p: 1.0,
            temperature: 1.2,
            frequency_penalty: 0.02,
            items_per_call: 5,
            model_name: "gpt-3.5-turbo".to_string(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::Config(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.items_per_call == 0 {
            return Err(GatewayError::Config("items_per_call must be >= 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::Config("max_tokens must be >= 1".into()));
        }
        Ok(())
    }

    /// Stable digest of the configuration, used in cache keys.
    pub fn digest(&self) -> String {
        hex_digest(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub raw_text: String,
    pub backend_name: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

/// A text-generation backend. Implementations must be safe for concurrent
/// `complete` calls.
pub trait Backend: Send + Sync {
    fn name(&self) -> String;

    /// Generates a completion for `prompt`. `call_seed` identifies the call
    /// within a run; deterministic backends derive their randomness from it.
    fn complete(&self, prompt: &PromptText, config: &GenerationConfig, call_seed: u64) -> Result<CompletionResult, GatewayError>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn complete(&self, prompt: &PromptText, config: &GenerationConfig, call_seed: u64) -> Result<CompletionResult, GatewayError> {
        (**self).complete(prompt, config, call_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_generation_settings() {
        let c = GenerationConfig::default();
        assert_eq!(c.max_tokens, 500);
        assert_eq!(c.top_p, 1.0);
        assert_eq!(c.temperature, 1.2);
        assert_eq!(c.frequency_penalty, 0.02);
        assert_eq!(c.items_per_call, 5);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = GenerationConfig { top_p: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        c.top_p = 1.0;
        c.items_per_call = 0;
        assert!(c.validate().is_err());
        c.items_per_call = 1;
        c.temperature = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn digest_tracks_fields() {
        let a = GenerationConfig::default();
        let b = GenerationConfig { temperature: 1.0, ..Default::default() };
        assert_eq!(a.digest(), GenerationConfig::default().digest());
        assert_ne!(a.digest(), b.digest());
    }
}
