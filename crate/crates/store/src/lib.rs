//! SQLite persistence for assignments, pseudonym maps, feedback records,
//! their audit trails and generation jobs.
//!
//! Writers hold a version token; a write against a stale token fails with
//! [`StoreError::ConcurrentModification`]. Audit rows are append-only at the
//! SQL level and every write must extend the stored trail with legal
//! transitions.

mod error;
mod query;
mod schema;
mod store;

pub use error::StoreError;
pub use query::{Page, RecordQuery, SortOrder, VersionedRecord, DEFAULT_LIMIT, MAX_LIMIT};
pub use schema::SCHEMA_VERSION;
pub use store::Store;
