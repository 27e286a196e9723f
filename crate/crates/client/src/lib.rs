//! Chat-completion client: a privacy gate, an in-flight cap, a per-minute
//! budget and retry with backoff in front of an HTTP or mock backend.

mod client;
mod config;
mod error;
mod gate;
mod http;
mod limiter;
pub mod mock;
mod request;

pub use client::{CaptureLog, CapturedRequest, ChatBackend, ClientStats, ModelClient};
pub use config::{ClientConfig, DEFAULT_BASE_URL, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL};
pub use error::{ClientError, TransportError};
pub use gate::OutboundGate;
pub use http::HttpBackend;
pub use limiter::RateLimiter;
pub use mock::{mock_complete, FailRule, MockBackend, MockCall};
pub use request::{ChatMessage, ChatRequest, ChatResponse, Role, DEFAULT_MODEL};
