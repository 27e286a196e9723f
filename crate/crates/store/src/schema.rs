use rusqlite::Connection;

use crate::error::StoreError;

/// Migrations in order; entry `i` upgrades `user_version` from `i` to `i + 1`.
const MIGRATIONS: &[&str] = &[
    r#"
CREATE TABLE assignments (
    assignment_id TEXT PRIMARY KEY,
    spec_json     TEXT NOT NULL,
    created_at    TEXT NOT NULL
);

CREATE TABLE students (
    assignment_id TEXT NOT NULL REFERENCES assignments(assignment_id) ON DELETE CASCADE,
    student_id    TEXT NOT NULL,
    total_grade   REAL NOT NULL,
    achievement   TEXT,
    record_json   TEXT NOT NULL,
    PRIMARY KEY (assignment_id, student_id)
);

CREATE TABLE pseudonym_maps (
    assignment_id TEXT PRIMARY KEY REFERENCES assignments(assignment_id) ON DELETE CASCADE,
    map_json      TEXT NOT NULL
);

CREATE TABLE feedback (
    record_id     TEXT PRIMARY KEY,
    assignment_id TEXT NOT NULL,
    student_id    TEXT NOT NULL,
    variant       TEXT NOT NULL,
    state         TEXT NOT NULL,
    triage        TEXT,
    mean_score    REAL,
    version       INTEGER NOT NULL,
    record_json   TEXT NOT NULL,
    updated_at    TEXT NOT NULL
);
CREATE INDEX feedback_state ON feedback(state);
CREATE INDEX feedback_assignment ON feedback(assignment_id, student_id);

CREATE TABLE audit (
    record_id  TEXT NOT NULL,
    seq        INTEGER NOT NULL,
    entry_json TEXT NOT NULL,
    PRIMARY KEY (record_id, seq)
);
CREATE TRIGGER audit_no_update BEFORE UPDATE ON audit
BEGIN SELECT RAISE(ABORT, 'audit entries are append-only'); END;
CREATE TRIGGER audit_no_delete BEFORE DELETE ON audit
BEGIN SELECT RAISE(ABORT, 'audit entries are append-only'); END;

CREATE TABLE jobs (
    job_id        TEXT PRIMARY KEY,
    assignment_id TEXT NOT NULL,
    status        TEXT NOT NULL,
    job_json      TEXT NOT NULL,
    created_at    TEXT NOT NULL,
    updated_at    TEXT NOT NULL
);
"#,
    r#"
CREATE TABLE settings (
    key   TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
"#,
];

pub const SCHEMA_VERSION: u32 = MIGRATIONS.len() as u32;

pub fn migrate(conn: &mut Connection) -> Result<(), StoreError> {
    let current: u32 = conn.query_row("PRAGMA user_version", [], |r| r.get(0))?;
    if current > SCHEMA_VERSION {
        return Err(StoreError::UnsupportedSchema {
            found: current,
            supported: SCHEMA_VERSION,
        });
    }
    for (i, sql) in MIGRATIONS.iter().enumerate().skip(current as usize) {
        let tx = conn.transaction()?;
        tx.execute_batch(sql)?;
        tx.pragma_update(None, "user_version", i as u32 + 1)?;
        tx.commit()?;
    }
    Ok(())
}
