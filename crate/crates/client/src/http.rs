use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::Deserialize;

use crate::client::ChatBackend;
use crate::config::ClientConfig;
use crate::error::TransportError;
use crate::request::{ChatRequest, ChatResponse};

/// Chat-completions over HTTP+JSON against any compatible base URL.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    http: reqwest::Client,
    endpoint: String,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpBackend {
    pub fn new(config: &ClientConfig) -> Result<Self, TransportError> {
        let http = reqwest::Client::builder()
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(HttpBackend {
            http,
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key: config.api_key.clone(),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

fn retry_after(headers: &reqwest::header::HeaderMap) -> Option<Duration> {
    let secs: f64 = headers
        .get(reqwest::header::RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse()
        .ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

#[async_trait]
impl ChatBackend for HttpBackend {
    fn provider(&self) -> &str {
        "http"
    }

    async fn send(&self, req: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let started = Instant::now();
        let mut builder = self.http.post(&self.endpoint).json(req);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().await.map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Network(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let after = retry_after(resp.headers());
            let body = resp.text().await.unwrap_or_default();
            return Err(TransportError::Status {
                status: status.as_u16(),
                body,
                retry_after: after,
            });
        }
        let wire: WireResponse = resp
            .json()
            .await
            .map_err(|e| TransportError::Malformed(e.to_string()))?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TransportError::Malformed("no choices[0].message.content".into()))?;
        let (prompt_tokens, completion_tokens) = wire.usage.map_or((0, 0), |u| (u.prompt_tokens, u.completion_tokens));
        Ok(ChatResponse {
            content,
            prompt_tokens,
            completion_tokens,
            latency_ms: started.elapsed().as_millis() as u64,
            provider: self.provider().to_owned(),
            request_id: req.request_id.clone(),
            attempts: 1,
        })
    }
}
