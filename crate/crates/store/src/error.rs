use copilot_core::{LifecycleEvent, LifecycleState};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("illegal transition: {event} from {from}")]
    IllegalTransition {
        from: LifecycleState,
        event: LifecycleEvent,
    },
    #[error("state {claimed} does not follow from the audit trail (ends in {replayed})")]
    StateMismatch {
        claimed: LifecycleState,
        replayed: LifecycleState,
    },
    #[error("record {record_id} was modified concurrently (expected version {expected:?}, current {current:?})")]
    ConcurrentModification {
        record_id: String,
        expected: Option<u64>,
        current: Option<u64>,
    },
    #[error("audit trail of {0} would be rewritten; entries are append-only")]
    AuditRewrite(String),
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("database schema version {found} is newer than supported version {supported}")]
    UnsupportedSchema { found: u32, supported: u32 },
    #[error("sqlite: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
