use copilot_core::analytics::AnalyticsError;
use copilot_core::ingest::ValidationFinding;
use copilot_core::{LifecycleEvent, LifecycleState};
use copilot_pipeline::PipelineError;
use copilot_store::StoreError;
use serde_json::{json, Value};
use thiserror::Error;

/// Coarse error classes; the server maps them to HTTP statuses and the CLI
/// to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Validation,
    NotFound,
    Conflict,
    Unauthorized,
    Forbidden,
    Provider,
    Internal,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Validation => "validation",
            ErrorKind::NotFound => "not_found",
            ErrorKind::Conflict => "conflict",
            ErrorKind::Unauthorized => "unauthorized",
            ErrorKind::Forbidden => "forbidden",
            ErrorKind::Provider => "provider",
            ErrorKind::Internal => "internal",
        }
    }

    pub fn http_status(self) -> u16 {
        match self {
            ErrorKind::Usage | ErrorKind::Validation => 422,
            ErrorKind::NotFound => 404,
            ErrorKind::Conflict => 409,
            ErrorKind::Unauthorized => 401,
            ErrorKind::Forbidden => 403,
            ErrorKind::Provider => 502,
            ErrorKind::Internal => 500,
        }
    }

    /// 1 usage/config, 2 validation, 3 provider, 4 internal.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Validation
            | ErrorKind::NotFound
            | ErrorKind::Conflict
            | ErrorKind::Unauthorized
            | ErrorKind::Forbidden => 2,
            ErrorKind::Provider => 3,
            ErrorKind::Internal => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum AppError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("bundle failed validation with {} finding(s)", .0.len())]
    InvalidBundle(Vec<ValidationFinding>),
    #[error("{0}")]
    Invalid(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("illegal transition: {event} from {from}")]
    IllegalTransition {
        from: LifecycleState,
        event: LifecycleEvent,
    },
    #[error("record {record_id} was modified concurrently (expected version {expected:?}, current {current:?})")]
    VersionConflict {
        record_id: String,
        expected: Option<u64>,
        current: Option<u64>,
    },
    #[error("record {record_id} cannot be edited in state {state}")]
    NotEditable { record_id: String, state: LifecycleState },
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error("capability token does not grant access to {0}")]
    Forbidden(String),
    #[error("model provider: {0}")]
    Provider(String),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("internal: {0}")]
    Internal(String),
}

impl AppError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            AppError::Config(_) => ErrorKind::Usage,
            AppError::InvalidBundle(_) | AppError::Invalid(_) | AppError::Analytics(_) => ErrorKind::Validation,
            AppError::NotFound(_) => ErrorKind::NotFound,
            AppError::IllegalTransition { .. } | AppError::VersionConflict { .. } | AppError::NotEditable { .. } => {
                ErrorKind::Conflict
            }
            AppError::Unauthorized => ErrorKind::Unauthorized,
            AppError::Forbidden(_) => ErrorKind::Forbidden,
            AppError::Provider(_) => ErrorKind::Provider,
            AppError::Io(_) | AppError::Internal(_) => ErrorKind::Internal,
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            AppError::Config(_) => "config",
            AppError::InvalidBundle(_) => "invalid_bundle",
            AppError::Invalid(_) => "invalid_request",
            AppError::NotFound(_) => "not_found",
            AppError::IllegalTransition { .. } => "illegal_transition",
            AppError::VersionConflict { .. } => "concurrent_modification",
            AppError::NotEditable { .. } => "not_editable",
            AppError::Unauthorized => "unauthorized",
            AppError::Forbidden(_) => "forbidden",
            AppError::Provider(_) => "provider_error",
            AppError::Analytics(_) => "insufficient_data",
            AppError::Io(_) => "io",
            AppError::Internal(_) => "internal",
        }
    }

    pub fn details(&self) -> Option<Value> {
        match self {
            AppError::InvalidBundle(findings) => Some(json!({ "findings": findings })),
            AppError::IllegalTransition { from, event } => Some(json!({ "from": from, "event": event })),
            AppError::VersionConflict {
                record_id,
                expected,
                current,
            } => Some(json!({ "record_id": record_id, "expected": expected, "current": current })),
            AppError::NotEditable { record_id, state } => Some(json!({ "record_id": record_id, "state": state })),
            _ => None,
        }
    }
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(what) => AppError::NotFound(what),
            StoreError::IllegalTransition { from, event } => AppError::IllegalTransition { from, event },
            StoreError::ConcurrentModification {
                record_id,
                expected,
                current,
            } => AppError::VersionConflict {
                record_id,
                expected,
                current,
            },
            StoreError::InvalidQuery(m) | StoreError::Invalid(m) => AppError::Invalid(m),
            other => AppError::Internal(other.to_string()),
        }
    }
}

impl From<PipelineError> for AppError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::BadTriage(m) => AppError::Config(m),
            PipelineError::ZeroParallelism => AppError::Invalid(e.to_string()),
            PipelineError::UnknownStudent(_) | PipelineError::InvalidStudent(..) => AppError::Invalid(e.to_string()),
            other => AppError::Internal(other.to_string()),
        }
    }
}
