use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::request::DEFAULT_MODEL;

pub const ENV_API_KEY: &str = "FEEDBACK_API_KEY";
pub const ENV_BASE_URL: &str = "FEEDBACK_API_BASE_URL";
pub const ENV_MODEL: &str = "FEEDBACK_MODEL";

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// Provider, sampling and traffic settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub base_url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    /// Model for the evaluation stage; `None` means use `model`.
    pub evaluation_model: Option<String>,
    pub feedback_temperature: f64,
    pub evaluation_temperature: f64,
    pub max_tokens: u32,
    pub max_attempts: u32,
    pub max_in_flight: usize,
    /// `None` disables the per-minute budget.
    pub requests_per_minute: Option<u32>,
    pub timeout_ms: u64,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            base_url: DEFAULT_BASE_URL.into(),
            api_key: None,
            model: DEFAULT_MODEL.into(),
            evaluation_model: None,
            feedback_temperature: 0.7,
            evaluation_temperature: 0.0,
            max_tokens: 1024,
            max_attempts: 4,
            max_in_flight: 4,
            requests_per_minute: None,
            timeout_ms: 60_000,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
        }
    }
}

impl ClientConfig {
    /// Overrides provider settings from the environment.
    pub fn apply_env(&mut self) {
        self.apply_vars(|k| std::env::var(k).ok());
    }

    pub fn apply_vars(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(key) = get(ENV_API_KEY).filter(|s| !s.is_empty()) {
            self.api_key = Some(key);
        }
        if let Some(url) = get(ENV_BASE_URL).filter(|s| !s.is_empty()) {
            self.base_url = url;
        }
        if let Some(model) = get(ENV_MODEL).filter(|s| !s.is_empty()) {
            self.model = model;
        }
    }

    pub fn evaluation_model(&self) -> &str {
        self.evaluation_model.as_deref().unwrap_or(&self.model)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Delay before retry number `attempt` (1-based): base · 2^(attempt-1), capped.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }
}
