use std::path::Path;
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

use chrono::Utc;
use copilot_core::analytics::{split_achievement, AchievementLevel};
use copilot_core::privacy::PseudonymMap;
use copilot_core::{
    replay_audit, AssignmentSpec, AuditEntry, FeedbackRecord, LifecycleEvent, RecordSink, StudentRecord,
    TransitionError,
};
use copilot_pipeline::GenerationJob;
use rusqlite::{params, Connection, OptionalExtension, Transaction, TransactionBehavior};

use crate::error::StoreError;
use crate::query::{Page, RecordQuery, VersionedRecord};
use crate::schema;

/// How a write is checked against the stored version.
#[derive(Debug, Clone, Copy)]
enum Expect {
    /// The caller's version token; `None` means the record must not exist yet.
    Version(Option<u64>),
    /// Overwrite whatever version is current (used by the pipeline sink).
    Current,
}

/// SQLite-backed store. One connection guarded by a mutex; every write runs
/// in an immediate transaction so separate processes serialize too.
pub struct Store {
    conn: Mutex<Connection>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").finish_non_exhaustive()
    }
}

impl Store {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "FULL")?;
        Self::init(conn)
    }

    pub fn open_in_memory() -> Result<Self, StoreError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(mut conn: Connection) -> Result<Self, StoreError> {
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.busy_timeout(Duration::from_secs(10))?;
        schema::migrate(&mut conn)?;
        Ok(Store { conn: Mutex::new(conn) })
    }

    pub fn schema_version(&self) -> Result<u32, StoreError> {
        Ok(self.lock().query_row("PRAGMA user_version", [], |r| r.get(0))?)
    }

    fn lock(&self) -> MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn write<T>(&self, f: impl FnOnce(&Transaction<'_>) -> Result<T, StoreError>) -> Result<T, StoreError> {
        let mut conn = self.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let out = f(&tx)?;
        tx.commit()?;
        Ok(out)
    }

    // ---- assignments -------------------------------------------------------

    /// Inserts or replaces an assignment and its cohort. Achievement levels
    /// are recomputed when the cohort has at least three students.
    pub fn put_assignment(&self, spec: &AssignmentSpec, students: &[StudentRecord]) -> Result<(), StoreError> {
        let levels = if students.len() >= 3 {
            let grades: Vec<(&str, f64)> = students
                .iter()
                .map(|s| (s.student_id.as_str(), s.total_grade))
                .collect();
            split_achievement(&grades).ok().map(|s| s.levels)
        } else {
            None
        };
        let spec_json = serde_json::to_string(spec)?;
        let now = Utc::now().to_rfc3339();
        self.write(|tx| {
            tx.execute(
                "INSERT INTO assignments (assignment_id, spec_json, created_at) VALUES (?1, ?2, ?3)
                 ON CONFLICT(assignment_id) DO UPDATE SET spec_json = excluded.spec_json",
                params![spec.assignment_id, spec_json, now],
            )?;
            tx.execute(
                "DELETE FROM students WHERE assignment_id = ?1",
                params![spec.assignment_id],
            )?;
            let mut stmt = tx.prepare(
                "INSERT INTO students (assignment_id, student_id, total_grade, achievement, record_json)
                 VALUES (?1, ?2, ?3, ?4, ?5)",
            )?;
            for s in students {
                let level = levels.as_ref().and_then(|l| l.get(&s.student_id)).map(|l| l.as_str());
                stmt.execute(params![
                    spec.assignment_id,
                    s.student_id,
                    s.total_grade,
                    level,
                    serde_json::to_string(s)?
                ])?;
            }
            Ok(())
        })
    }

    pub fn get_assignment(&self, assignment_id: &str) -> Result<AssignmentSpec, StoreError> {
        let json: Option<String> = self
            .lock()
            .query_row(
                "SELECT spec_json FROM assignments WHERE assignment_id = ?1",
                params![assignment_id],
                |r| r.get(0),
            )
            .optional()?;
        let json = json.ok_or_else(|| StoreError::NotFound(format!("assignment {assignment_id}")))?;
        Ok(serde_json::from_str(&json)?)
    }

    pub fn list_assignments(&self) -> Result<Vec<String>, StoreError> {
        let conn = self.lock();
        let mut stmt = conn.prepare("SELECT assignment_id FROM assignments ORDER BY assignment_id")?;
        let ids = stmt.query_map([], |r| r.get(0))?.collect::<Result<Vec<String>, _>>()?;
        Ok(ids)
    }

    /// Students of an assignment ordered by id.
    pub fn get_students(&self, assignment_id: &str) -> Result<Vec<StudentRecord>, StoreError> {
        let conn = self.lock();
        let mut stmt = conn.prepare("SELECT record_json FROM students WHERE assignment_id = ?1 ORDER BY student_id")?;
        let rows = stmt.query_map(params![assignment_id], |r| r.get::<_, String>(0))?;
        let mut out = Vec::new();
        for json in rows {
            out.push(serde_json::from_str(&json?)?);
        }
        Ok(out)
    }

    pub fn achievement_levels(
        &self,
        assignment_id: &str,
    ) -> Result<std::collections::BTreeMap<String, AchievementLevel>, StoreError> {
        let conn = self.lock();
        let mut stmt = conn.prepare(
            "SELECT student_id, achievement FROM students WHERE assignment_id = ?1 AND achievement IS NOT NULL",
        )?;
        let rows = stmt.query_map(params![assignment_id], |r| {
            Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?))
        })?;
        let mut out = std::collections::BTreeMap::new();
        for row in rows {
            let (id, level) = row?;
            let level = level.parse().map_err(StoreError::Invalid)?;
            out.insert(id, level);
        }
        Ok(out)
    }

    pub fn put_pseudonym_map(&self, assignment_id: &str, map: &PseudonymMap) -> Result<(), StoreError> {
        let json = serde_json::to_string(map)?;
        self.write(|tx| {
            tx.execute(
                "INSERT INTO pseudonym_maps (assignment_id, map_json) VALUES (?1, ?2)
                 ON CONFLICT(assignment_id) DO UPDATE SET map_json = excluded.map_json",
                params![assignment_id, json],
            )?;
            Ok(())
        })
    }

    pub fn get_pseudonym_map(&self, assignment_id: &str) -> Result<PseudonymMap, StoreError> {
        let json: Option<String> = self
            .lock()
            .query_row(
                "SELECT map_json FROM pseudonym_maps WHERE assignment_id = ?1",
                params![assignment_id],
                |r| r.get(0),
            )
            .optional()?;
        let json = json.ok_or_else(|| StoreError::NotFound(format!("pseudonym map for {assignment_id}")))?;
        Ok(serde_json::from_str(&json)?)
    }

    // ---- feedback records --------------------------------------------------

    /// Writes `record` if `expected_version` matches the stored version
    /// (`None` for a new record) and returns the new version.
    ///
    /// The stored audit must be a prefix of `record.audit`, and the new
    /// entries must replay legally from the stored state to `record.state`.
    pub fn put_record(&self, record: &FeedbackRecord, expected_version: Option<u64>) -> Result<u64, StoreError> {
        self.write(|tx| write_record(tx, record, Expect::Version(expected_version)))
    }

    /// Writes `record` over whatever version is current. Audit and
    /// transition checks still apply.
    pub fn save_record(&self, record: &FeedbackRecord) -> Result<u64, StoreError> {
        self.write(|tx| write_record(tx, record, Expect::Current))
    }

    /// Loads a record, applies `event` and writes it back under the loaded
    /// version token.
    pub fn apply_event(
        &self,
        record_id: &str,
        expected_version: Option<u64>,
        event: LifecycleEvent,
        actor: &str,
        note: Option<String>,
    ) -> Result<VersionedRecord, StoreError> {
        self.write(|tx| {
            let current =
                read_record(tx, record_id)?.ok_or_else(|| StoreError::NotFound(format!("record {record_id}")))?;
            if let Some(expected) = expected_version {
                if expected != current.version {
                    return Err(StoreError::ConcurrentModification {
                        record_id: record_id.to_owned(),
                        expected: Some(expected),
                        current: Some(current.version),
                    });
                }
            }
            let next = current
                .record
                .transition_with_note(event, actor, note)
                .map_err(map_transition)?;
            let version = write_record(tx, &next, Expect::Version(Some(current.version)))?;
            Ok(VersionedRecord {
                version,
                achievement: current.achievement,
                record: next,
            })
        })
    }

    pub fn get_record(&self, record_id: &str) -> Result<VersionedRecord, StoreError> {
        let conn = self.lock();
        read_record(&conn, record_id)?.ok_or_else(|| StoreError::NotFound(format!("record {record_id}")))
    }

    pub fn record_exists(&self, record_id: &str) -> Result<bool, StoreError> {
        let conn = self.lock();
        let n: i64 = conn.query_row(
            "SELECT COUNT(*) FROM feedback WHERE record_id = ?1",
            params![record_id],
            |r| r.get(0),
        )?;
        Ok(n > 0)
    }

    pub fn query_records(&self, q: &RecordQuery) -> Result<Page, StoreError> {
        q.validate()?;
        let conn = self.lock();
        let filter = "FROM feedback f LEFT JOIN students s
                ON s.assignment_id = f.assignment_id AND s.student_id = f.student_id
             WHERE (?1 IS NULL OR f.assignment_id = ?1)
               AND (?2 IS NULL OR f.state = ?2)
               AND (?3 IS NULL OR f.triage = ?3)
               AND (?4 IS NULL OR s.achievement = ?4)
               AND (?5 IS NULL OR f.variant = ?5)";
        let assignment = q.assignment_id.as_deref();
        let state = q.state.map(|s| s.as_str());
        let triage = q.triage.map(|t| t.as_str());
        let achievement = q.achievement.map(|a| a.as_str());
        let variant = q.variant.map(|v| v.as_str());
        let total: i64 = conn.query_row(
            &format!("SELECT COUNT(*) {filter}"),
            params![assignment, state, triage, achievement, variant],
            |r| r.get(0),
        )?;
        let sql = format!(
            "SELECT f.record_id {filter} ORDER BY {} LIMIT ?6 OFFSET ?7",
            q.sort.sql()
        );
        let mut stmt = conn.prepare(&sql)?;
        let ids = stmt
            .query_map(
                params![
                    assignment,
                    state,
                    triage,
                    achievement,
                    variant,
                    q.limit as i64,
                    q.offset as i64
                ],
                |r| r.get::<_, String>(0),
            )?
            .collect::<Result<Vec<_>, _>>()?;
        let mut items = Vec::with_capacity(ids.len());
        for id in ids {
            items.extend(read_record(&conn, &id)?);
        }
        Ok(Page {
            total: total as usize,
            offset: q.offset,
            limit: q.limit,
            items,
        })
    }

    /// Every record, optionally restricted to one assignment, ordered by id.
    pub fn all_records(&self, assignment_id: Option<&str>) -> Result<Vec<VersionedRecord>, StoreError> {
        let conn = self.lock();
        let mut stmt =
            conn.prepare("SELECT record_id FROM feedback WHERE (?1 IS NULL OR assignment_id = ?1) ORDER BY record_id")?;
        let ids = stmt
            .query_map(params![assignment_id], |r| r.get::<_, String>(0))?
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            out.extend(read_record(&conn, &id)?);
        }
        Ok(out)
    }

    pub fn list_audit(&self, record_id: &str) -> Result<Vec<AuditEntry>, StoreError> {
        read_audit(&self.lock(), record_id)
    }

    // ---- settings ----------------------------------------------------------

    pub fn get_setting(&self, key: &str) -> Result<Option<String>, StoreError> {
        Ok(self
            .lock()
            .query_row("SELECT value FROM settings WHERE key = ?1", params![key], |r| r.get(0))
            .optional()?)
    }

    /// Stores `value` unless `key` is already set; returns the value in effect.
    pub fn setting_or_insert(&self, key: &str, value: &str) -> Result<String, StoreError> {
        self.write(|tx| {
            tx.execute(
                "INSERT OR IGNORE INTO settings (key, value) VALUES (?1, ?2)",
                params![key, value],
            )?;
            Ok(tx.query_row("SELECT value FROM settings WHERE key = ?1", params![key], |r| r.get(0))?)
        })
    }

    // ---- jobs --------------------------------------------------------------

    pub fn put_job(&self, job: &GenerationJob) -> Result<(), StoreError> {
        let json = serde_json::to_string(job)?;
        let now = Utc::now().to_rfc3339();
        self.write(|tx| {
            tx.execute(
                "INSERT INTO jobs (job_id, assignment_id, status, job_json, created_at, updated_at)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?5)
                 ON CONFLICT(job_id) DO UPDATE SET
                    status = excluded.status, job_json = excluded.job_json, updated_at = excluded.updated_at",
                params![job.job_id, job.assignment_id, job.status.as_str(), json, now],
            )?;
            Ok(())
        })
    }

    pub fn get_job(&self, job_id: &str) -> Result<GenerationJob, StoreError> {
        let json: Option<String> = self
            .lock()
            .query_row("SELECT job_json FROM jobs WHERE job_id = ?1", params![job_id], |r| {
                r.get(0)
            })
            .optional()?;
        let json = json.ok_or_else(|| StoreError::NotFound(format!("job {job_id}")))?;
        Ok(serde_json::from_str(&json)?)
    }

    pub fn list_jobs(&self, assignment_id: Option<&str>) -> Result<Vec<GenerationJob>, StoreError> {
        let conn = self.lock();
        let mut stmt = conn.prepare(
            "SELECT job_json FROM jobs WHERE (?1 IS NULL OR assignment_id = ?1) ORDER BY created_at, job_id",
        )?;
        let rows = stmt.query_map(params![assignment_id], |r| r.get::<_, String>(0))?;
        let mut out = Vec::new();
        for json in rows {
            out.push(serde_json::from_str(&json?)?);
        }
        Ok(out)
    }
}

impl RecordSink for Store {
    fn save(&self, record: &FeedbackRecord) -> Result<(), String> {
        self.save_record(record).map(|_| ()).map_err(|e| e.to_string())
    }
}

fn map_transition(e: TransitionError) -> StoreError {
    match e {
        TransitionError::IllegalTransition { from, event } => StoreError::IllegalTransition { from, event },
        TransitionError::MissingEvaluation(state) => {
            StoreError::Invalid(format!("cannot enter {state} without an evaluation report"))
        }
    }
}

/// Assignment id encoded in a canonical record id, or empty if the id is not canonical.
fn assignment_of(record: &FeedbackRecord) -> &str {
    let suffix = format!(":{}:{}", record.student_id, record.variant);
    record.record_id.strip_suffix(suffix.as_str()).unwrap_or("")
}

fn write_record(tx: &Transaction<'_>, record: &FeedbackRecord, expect: Expect) -> Result<u64, StoreError> {
    if record.record_id.is_empty() {
        return Err(StoreError::Invalid("record_id is empty".into()));
    }
    if record.state.is_post_triage() && record.evaluation.is_none() {
        return Err(StoreError::Invalid(format!(
            "state {} requires an evaluation report",
            record.state
        )));
    }
    let current = read_record(tx, &record.record_id)?;
    let current_version = current.as_ref().map(|c| c.version);
    if let Expect::Version(expected) = expect {
        if expected != current_version {
            return Err(StoreError::ConcurrentModification {
                record_id: record.record_id.clone(),
                expected,
                current: current_version,
            });
        }
    }

    let (start_state, stored_len) = match &current {
        None => (copilot_core::LifecycleState::Queued, 0),
        Some(c) => {
            if c.record.student_id != record.student_id || c.record.variant != record.variant {
                return Err(StoreError::Invalid(format!(
                    "identity of {} cannot change",
                    record.record_id
                )));
            }
            let n = c.record.audit.len();
            if record.audit.len() < n || record.audit[..n] != c.record.audit[..] {
                return Err(StoreError::AuditRewrite(record.record_id.clone()));
            }
            (c.record.state, n)
        }
    };
    let suffix = &record.audit[stored_len..];
    let replayed = replay_audit(start_state, suffix).map_err(map_transition)?;
    if replayed != record.state {
        return Err(StoreError::StateMismatch {
            claimed: record.state,
            replayed,
        });
    }

    let mut body = record.clone();
    body.audit.clear();
    let body_json = serde_json::to_string(&body)?;
    let version = current_version.unwrap_or(0) + 1;
    let now = Utc::now().to_rfc3339();
    let mean = record.evaluation.as_ref().map(|e| e.mean_score);
    let triage = record.triage.map(|t| t.as_str());
    tx.execute(
        "INSERT INTO feedback
            (record_id, assignment_id, student_id, variant, state, triage, mean_score, version, record_json, updated_at)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10)
         ON CONFLICT(record_id) DO UPDATE SET
            state = excluded.state, triage = excluded.triage, mean_score = excluded.mean_score,
            version = excluded.version, record_json = excluded.record_json, updated_at = excluded.updated_at",
        params![
            record.record_id,
            assignment_of(record),
            record.student_id,
            record.variant.as_str(),
            record.state.as_str(),
            triage,
            mean,
            version as i64,
            body_json,
            now
        ],
    )?;
    let mut stmt = tx.prepare("INSERT INTO audit (record_id, seq, entry_json) VALUES (?1, ?2, ?3)")?;
    for (i, entry) in suffix.iter().enumerate() {
        stmt.execute(params![
            record.record_id,
            (stored_len + i) as i64,
            serde_json::to_string(entry)?
        ])?;
    }
    Ok(version)
}

fn read_audit(conn: &Connection, record_id: &str) -> Result<Vec<AuditEntry>, StoreError> {
    let mut stmt = conn.prepare_cached("SELECT entry_json FROM audit WHERE record_id = ?1 ORDER BY seq")?;
    let rows = stmt.query_map(params![record_id], |r| r.get::<_, String>(0))?;
    let mut out = Vec::new();
    for json in rows {
        out.push(serde_json::from_str(&json?)?);
    }
    Ok(out)
}

fn read_record(conn: &Connection, record_id: &str) -> Result<Option<VersionedRecord>, StoreError> {
    let row: Option<(i64, String, Option<String>)> = conn
        .prepare_cached(
            "SELECT f.version, f.record_json, s.achievement FROM feedback f
             LEFT JOIN students s ON s.assignment_id = f.assignment_id AND s.student_id = f.student_id
             WHERE f.record_id = ?1",
        )?
        .query_row(params![record_id], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))
        .optional()?;
    let Some((version, json, achievement)) = row else {
        return Ok(None);
    };
    let mut record: FeedbackRecord = serde_json::from_str(&json)?;
    record.audit = read_audit(conn, record_id)?;
    let achievement = achievement
        .map(|a| a.parse())
        .transpose()
        .map_err(StoreError::Invalid)?;
    Ok(Some(VersionedRecord {
        version: version as u64,
        achievement,
        record,
    }))
}
