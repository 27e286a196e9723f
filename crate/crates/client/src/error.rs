use std::time::Duration;

use copilot_core::privacy::Finding;
use thiserror::Error;

/// Failure of one transport attempt.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Status {
        status: u16,
        body: String,
        retry_after: Option<Duration>,
    },
    #[error("timed out")]
    Timeout,
    #[error("network: {0}")]
    Network(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl TransportError {
    pub fn status(status: u16, body: impl Into<String>) -> Self {
        TransportError::Status {
            status,
            body: body.into(),
            retry_after: None,
        }
    }

    /// Rate limiting, server errors, timeouts and dropped connections are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            TransportError::Timeout | TransportError::Network(_) => true,
            TransportError::Malformed(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("request blocked: {} roster literal(s) found in outbound text", .0.len())]
    PiiLeakBlocked(Vec<Finding>),
    #[error("provider error {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("network error: {0}")]
    Network(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("provider returned empty content for {0}")]
    EmptyContent(String),
}

impl ClientError {
    pub(crate) fn from_transport(e: TransportError, elapsed: Duration) -> Self {
        match e {
            TransportError::Status { status, body, .. } => ClientError::ProviderError { status, body },
            TransportError::Timeout => ClientError::Timeout(elapsed),
            TransportError::Network(m) => ClientError::Network(m),
            TransportError::Malformed(m) => ClientError::Malformed(m),
        }
    }
}
