use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::config::ClientConfig;
use crate::error::{ClientError, TransportError};
use crate::gate::OutboundGate;
use crate::limiter::RateLimiter;
use crate::request::{ChatMessage, ChatRequest, ChatResponse};

/// One transport attempt against a provider.
#[async_trait]
pub trait ChatBackend: Send + Sync {
    fn provider(&self) -> &str;

    async fn send(&self, req: &ChatRequest) -> Result<ChatResponse, TransportError>;
}

/// A request as it left the process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapturedRequest {
    pub request_id: String,
    pub model: String,
    #[serde(default)]
    pub user: Option<String>,
    pub messages: Vec<ChatMessage>,
}

/// Append-only record of every request that passed the gate.
#[derive(Debug, Default)]
pub struct CaptureLog {
    entries: Mutex<Vec<CapturedRequest>>,
}

impl CaptureLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, req: &ChatRequest) {
        self.entries
            .lock()
            .expect("capture log poisoned")
            .push(CapturedRequest {
                request_id: req.request_id.clone(),
                model: req.model.clone(),
                user: req.user.clone(),
                messages: req.messages.clone(),
            });
    }

    pub fn snapshot(&self) -> Vec<CapturedRequest> {
        self.entries.lock().expect("capture log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("capture log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Default)]
struct Counters {
    completed: AtomicU64,
    transmissions: AtomicU64,
    blocked: AtomicU64,
}

/// Traffic counters since the client was built.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClientStats {
    /// Requests that returned content.
    pub completed: u64,
    /// Attempts handed to the backend, retries included.
    pub transmissions: u64,
    /// Requests stopped by the privacy gate.
    pub blocked: u64,
}

/// Shareable client: privacy gate, in-flight cap, per-minute budget and
/// retry with exponential backoff in front of a [`ChatBackend`].
pub struct ModelClient {
    backend: Arc<dyn ChatBackend>,
    gate: OutboundGate,
    config: ClientConfig,
    in_flight: Semaphore,
    rpm: Option<RateLimiter>,
    capture: Option<Arc<CaptureLog>>,
    counters: Counters,
}

impl std::fmt::Debug for ModelClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelClient")
            .field("provider", &self.backend.provider())
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl ModelClient {
    pub fn new(backend: Arc<dyn ChatBackend>, config: ClientConfig) -> Self {
        ModelClient {
            backend,
            gate: OutboundGate::open(),
            in_flight: Semaphore::new(config.max_in_flight.max(1)),
            rpm: config.requests_per_minute.map(RateLimiter::per_minute),
            config,
            capture: None,
            counters: Counters::default(),
        }
    }

    pub fn with_gate(mut self, gate: OutboundGate) -> Self {
        self.gate = gate;
        self
    }

    pub fn with_capture(mut self, log: Arc<CaptureLog>) -> Self {
        self.capture = Some(log);
        self
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn provider(&self) -> &str {
        self.backend.provider()
    }

    pub fn gate(&self) -> &OutboundGate {
        &self.gate
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            completed: self.counters.completed.load(Ordering::Relaxed),
            transmissions: self.counters.transmissions.load(Ordering::Relaxed),
            blocked: self.counters.blocked.load(Ordering::Relaxed),
        }
    }

    pub async fn complete(&self, req: ChatRequest) -> Result<ChatResponse, ClientError> {
        req.validate()?;
        if let Err(findings) = self.gate.check(&req) {
            self.counters.blocked.fetch_add(1, Ordering::Relaxed);
            tracing::warn!(request_id = %req.request_id, findings = findings.len(), "outbound request blocked");
            return Err(ClientError::PiiLeakBlocked(findings));
        }
        if let Some(log) = &self.capture {
            log.push(&req);
        }
        // bodies have passed the gate; only their shape is logged
        tracing::debug!(
            request_id = %req.request_id,
            model = %req.model,
            user = req.user.as_deref().unwrap_or(""),
            system_chars = req.system_text().len(),
            user_chars = req.user_text().len(),
            "outbound request"
        );

        let started = Instant::now();
        let max_attempts = self.config.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            if let Some(rpm) = &self.rpm {
                rpm.acquire().await;
            }
            let result = {
                let _permit = self.in_flight.acquire().await.expect("semaphore is never closed");
                self.counters.transmissions.fetch_add(1, Ordering::Relaxed);
                let t = Instant::now();
                match tokio::time::timeout(self.config.timeout(), self.backend.send(&req)).await {
                    Ok(r) => r.map(|resp| (resp, t.elapsed())),
                    Err(_) => Err(TransportError::Timeout),
                }
            };
            match result {
                Ok((mut resp, took)) => {
                    if resp.content.trim().is_empty() {
                        return Err(ClientError::EmptyContent(req.request_id));
                    }
                    resp.request_id = req.request_id;
                    resp.attempts = attempt;
                    if resp.latency_ms == 0 {
                        resp.latency_ms = took.as_millis() as u64;
                    }
                    self.counters.completed.fetch_add(1, Ordering::Relaxed);
                    return Ok(resp);
                }
                Err(e) if e.is_transient() && attempt < max_attempts => {
                    let mut delay = self.config.backoff(attempt);
                    if let TransportError::Status {
                        retry_after: Some(after),
                        ..
                    } = &e
                    {
                        delay = delay.max(*after);
                    }
                    tracing::info!(request_id = %req.request_id, attempt, error = %e, ?delay, "retrying");
                    tokio::time::sleep(delay).await;
                }
                Err(e) => return Err(ClientError::from_transport(e, started.elapsed())),
            }
        }
    }
}
