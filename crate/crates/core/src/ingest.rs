//! Assignment bundle ingestion.
//!
//! A bundle is three files: `assignment.json` (an [`AssignmentSpec`]),
//! `submissions.csv` (one row per student per task) and `roster.csv`
//! (`student_id,display_name,email`). See `docs/bundle-format.md`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AssignmentSpec, StudentRecord, TaskResponse};

pub const ASSIGNMENT_FILE: &str = "assignment.json";
pub const SUBMISSIONS_FILE: &str = "submissions.csv";
pub const ROSTER_FILE: &str = "roster.csv";
pub const BUNDLE_FILES: [&str; 3] = [ASSIGNMENT_FILE, SUBMISSIONS_FILE, ROSTER_FILE];

const SUBMISSION_COLUMNS: [&str; 5] = [
    "student_id",
    "task_id",
    "answer_text",
    "applied_rubric_item_ids",
    "points_awarded",
];
const ROSTER_COLUMNS: [&str; 3] = ["student_id", "display_name", "email"];

/// Raw bundle contents keyed by file name.
#[derive(Debug, Clone, Default)]
pub struct AssignmentBundle {
    files: BTreeMap<String, Vec<u8>>,
}

impl AssignmentBundle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads whichever of the three bundle files exist in `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("{} is not a directory", dir.display()),
            ));
        }
        let mut bundle = Self::new();
        for name in BUNDLE_FILES {
            let path = dir.join(name);
            match std::fs::read(&path) {
                Ok(bytes) => bundle.insert(name, bytes),
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(e),
            }
        }
        Ok(bundle)
    }

    pub fn insert(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.insert(name.to_owned(), bytes.into());
    }

    pub fn with_file(mut self, name: &str, bytes: impl Into<Vec<u8>>) -> Self {
        self.insert(name, bytes);
        self
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum ValidationFinding {
    MissingFile {
        name: String,
    },
    MalformedRow {
        file: String,
        line: u64,
        reason: String,
    },
    DanglingReference {
        kind: String,
        id: String,
        file: String,
        line: u64,
    },
    PointsOutOfRange {
        student_id: String,
        task_id: String,
        points: f64,
        max_points: f64,
        line: u64,
    },
    InvalidAssignment {
        reason: String,
    },
}

impl fmt::Display for ValidationFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationFinding::MissingFile { name } => write!(f, "missing file {name}"),
            ValidationFinding::MalformedRow { file, line, reason } => {
                write!(f, "{file}:{line}: {reason}")
            }
            ValidationFinding::DanglingReference { kind, id, file, line } => {
                write!(f, "{file}:{line}: unknown {kind} {id:?}")
            }
            ValidationFinding::PointsOutOfRange {
                student_id,
                task_id,
                points,
                max_points,
                line,
            } => write!(
                f,
                "{SUBMISSIONS_FILE}:{line}: student {student_id} task {task_id}: points {points} outside [0, {max_points}]"
            ),
            ValidationFinding::InvalidAssignment { reason } => {
                write!(f, "{ASSIGNMENT_FILE}: {reason}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("{file}:{line}: {reason}")]
    MalformedRow { file: String, line: u64, reason: String },
    #[error("dangling reference: {kind} {id:?}")]
    DanglingReference { kind: String, id: String },
    #[error("{0}")]
    Invalid(ValidationFinding),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl From<ValidationFinding> for IngestError {
    fn from(f: ValidationFinding) -> Self {
        match f {
            ValidationFinding::MissingFile { name } => IngestError::MissingFile(name),
            ValidationFinding::MalformedRow { file, line, reason } => IngestError::MalformedRow { file, line, reason },
            ValidationFinding::DanglingReference { kind, id, .. } => IngestError::DanglingReference { kind, id },
            other => IngestError::Invalid(other),
        }
    }
}

/// Parses and cross-validates a bundle. Fails with the first finding that
/// [`validate_bundle`] would report.
pub fn parse_bundle(bundle: &AssignmentBundle) -> Result<(AssignmentSpec, Vec<StudentRecord>), IngestError> {
    let (parsed, findings) = inspect(bundle);
    match (parsed, findings.into_iter().next()) {
        (Some(parsed), None) => Ok(parsed),
        (_, Some(first)) => Err(first.into()),
        (None, None) => unreachable!("inspect returns findings whenever parsing fails"),
    }
}

/// Returns every problem with the bundle. An empty list means
/// [`parse_bundle`] will succeed.
pub fn validate_bundle(bundle: &AssignmentBundle) -> Vec<ValidationFinding> {
    inspect(bundle).1
}

struct RosterEntry {
    display_name: String,
    email: Option<String>,
}

struct Submission {
    line: u64,
    answer_text: String,
    applied: BTreeSet<String>,
    points: f64,
}

fn inspect(bundle: &AssignmentBundle) -> (Option<(AssignmentSpec, Vec<StudentRecord>)>, Vec<ValidationFinding>) {
    let mut findings = Vec::new();
    for name in BUNDLE_FILES {
        if bundle.file(name).is_none() {
            findings.push(ValidationFinding::MissingFile { name: name.into() });
        }
    }

    let assignment = bundle
        .file(ASSIGNMENT_FILE)
        .and_then(|bytes| parse_assignment(bytes, &mut findings));
    let roster = bundle.file(ROSTER_FILE).map(|bytes| parse_roster(bytes, &mut findings));
    let submissions = bundle
        .file(SUBMISSIONS_FILE)
        .map(|bytes| parse_submissions(bytes, &mut findings));

    let (Some(assignment), Some(roster), Some(submissions)) = (assignment, roster, submissions) else {
        return (None, findings);
    };

    let students = cross_validate(&assignment, &roster, submissions, &mut findings);
    if findings.is_empty() {
        (Some((assignment, students)), findings)
    } else {
        (None, findings)
    }
}

fn parse_assignment(bytes: &[u8], findings: &mut Vec<ValidationFinding>) -> Option<AssignmentSpec> {
    let spec: AssignmentSpec = match serde_json::from_slice(bytes) {
        Ok(spec) => spec,
        Err(e) => {
            findings.push(ValidationFinding::MalformedRow {
                file: ASSIGNMENT_FILE.into(),
                line: e.line() as u64,
                reason: e.to_string(),
            });
            return None;
        }
    };
    if let Err(e) = spec.validate() {
        findings.push(ValidationFinding::InvalidAssignment { reason: e.to_string() });
        return None;
    }
    Some(spec)
}

fn csv_reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_reader(bytes)
}

/// Maps required column names to their index in the header row.
fn column_index<const N: usize>(
    reader: &mut csv::Reader<&[u8]>,
    file: &str,
    required: [&str; N],
    findings: &mut Vec<ValidationFinding>,
) -> Option<[usize; N]> {
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => {
            findings.push(ValidationFinding::MalformedRow {
                file: file.into(),
                line: 1,
                reason: e.to_string(),
            });
            return None;
        }
    };
    let mut idx = [0; N];
    for (slot, name) in idx.iter_mut().zip(required) {
        match headers.iter().position(|h| h == name) {
            Some(i) => *slot = i,
            None => {
                findings.push(ValidationFinding::MalformedRow {
                    file: file.into(),
                    line: 1,
                    reason: format!("header is missing column {name:?}"),
                });
                return None;
            }
        }
    }
    Some(idx)
}

fn parse_roster(bytes: &[u8], findings: &mut Vec<ValidationFinding>) -> HashMap<String, RosterEntry> {
    let mut roster = HashMap::new();
    let mut reader = csv_reader(bytes);
    let Some([id_col, name_col, email_col]) = column_index(&mut reader, ROSTER_FILE, ROSTER_COLUMNS, findings) else {
        return roster;
    };
    for row in reader.records() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                findings.push(malformed_csv(ROSTER_FILE, &e));
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        let id = row.get(id_col).unwrap_or("").trim();
        let name = row.get(name_col).unwrap_or("").trim();
        let email = row.get(email_col).unwrap_or("").trim();
        if id.is_empty() || name.is_empty() {
            findings.push(ValidationFinding::MalformedRow {
                file: ROSTER_FILE.into(),
                line,
                reason: "student_id and display_name are required".into(),
            });
            continue;
        }
        let entry = RosterEntry {
            display_name: name.to_owned(),
            email: (!email.is_empty()).then(|| email.to_owned()),
        };
        if roster.insert(id.to_owned(), entry).is_some() {
            findings.push(ValidationFinding::MalformedRow {
                file: ROSTER_FILE.into(),
                line,
                reason: format!("duplicate student_id {id:?}"),
            });
        }
    }
    roster
}

type SubmissionKey = (String, String);

fn parse_submissions(bytes: &[u8], findings: &mut Vec<ValidationFinding>) -> BTreeMap<SubmissionKey, Submission> {
    let mut out = BTreeMap::new();
    let mut reader = csv_reader(bytes);
    let Some([sid, tid, ans, applied, pts]) = column_index(&mut reader, SUBMISSIONS_FILE, SUBMISSION_COLUMNS, findings)
    else {
        return out;
    };
    for row in reader.records() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                findings.push(malformed_csv(SUBMISSIONS_FILE, &e));
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        let malformed = |reason: String| ValidationFinding::MalformedRow {
            file: SUBMISSIONS_FILE.into(),
            line,
            reason,
        };
        let student = row.get(sid).unwrap_or("").trim().to_owned();
        let task = row.get(tid).unwrap_or("").trim().to_owned();
        if student.is_empty() || task.is_empty() {
            findings.push(malformed("student_id and task_id are required".into()));
            continue;
        }
        let raw_points = row.get(pts).unwrap_or("").trim();
        let points = if raw_points.is_empty() {
            0.0
        } else {
            match raw_points.parse::<f64>() {
                Ok(p) if p.is_finite() => p,
                _ => {
                    findings.push(malformed(format!("points_awarded {raw_points:?} is not a number")));
                    continue;
                }
            }
        };
        let applied_ids = row
            .get(applied)
            .unwrap_or("")
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect();
        let submission = Submission {
            line,
            answer_text: row.get(ans).unwrap_or("").to_owned(),
            applied: applied_ids,
            points,
        };
        let key = (student.clone(), task.clone());
        if out.contains_key(&key) {
            findings.push(malformed(format!(
                "duplicate submission for student {student:?} task {task:?}"
            )));
            continue;
        }
        out.insert(key, submission);
    }
    out
}

fn malformed_csv(file: &str, e: &csv::Error) -> ValidationFinding {
    ValidationFinding::MalformedRow {
        file: file.into(),
        line: e.position().map_or(0, |p| p.line()),
        reason: e.to_string(),
    }
}

fn cross_validate(
    assignment: &AssignmentSpec,
    roster: &HashMap<String, RosterEntry>,
    submissions: BTreeMap<SubmissionKey, Submission>,
    findings: &mut Vec<ValidationFinding>,
) -> Vec<StudentRecord> {
    let dangling = |kind: &str, id: &str, line: u64| ValidationFinding::DanglingReference {
        kind: kind.into(),
        id: id.into(),
        file: SUBMISSIONS_FILE.into(),
        line,
    };

    let mut by_student: BTreeMap<String, HashMap<String, Submission>> = BTreeMap::new();
    for ((student, task_id), sub) in submissions {
        let Some(task) = assignment.task(&task_id) else {
            findings.push(dangling("task", &task_id, sub.line));
            continue;
        };
        if !roster.contains_key(&student) {
            findings.push(dangling("student", &student, sub.line));
            continue;
        }
        for item in &sub.applied {
            if task.rubric_item(item).is_none() {
                findings.push(dangling("rubric_item", item, sub.line));
            }
        }
        if !(0.0..=task.max_points).contains(&sub.points) {
            findings.push(ValidationFinding::PointsOutOfRange {
                student_id: student.clone(),
                task_id: task_id.clone(),
                points: sub.points,
                max_points: task.max_points,
                line: sub.line,
            });
        }
        by_student.entry(student).or_default().insert(task_id, sub);
    }

    by_student
        .into_iter()
        .map(|(student_id, mut subs)| {
            let responses: Vec<TaskResponse> = assignment
                .tasks
                .iter()
                .map(|task| match subs.remove(&task.task_id) {
                    Some(sub) => TaskResponse {
                        task_id: task.task_id.clone(),
                        answer_text: sub.answer_text,
                        applied_rubric_item_ids: sub.applied,
                        points_awarded: sub.points,
                    },
                    // skipped question
                    None => TaskResponse {
                        task_id: task.task_id.clone(),
                        answer_text: String::new(),
                        applied_rubric_item_ids: BTreeSet::new(),
                        points_awarded: 0.0,
                    },
                })
                .collect();
            let total_grade = responses.iter().map(|r| r.points_awarded).sum();
            let entry = &roster[&student_id];
            StudentRecord {
                student_id,
                display_name: entry.display_name.clone(),
                email: entry.email.clone(),
                responses,
                total_grade,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const ASSIGNMENT: &str = r#"{
        "assignment_id": "a1", "title": "SQL", "context_text": "schema",
        "tasks": [
            {"task_id": "T1", "question_text": "q1", "sample_solution": "s1", "max_points": 2,
             "rubric": [{"item_id": "R1", "description": "ok", "point_delta": 0},
                        {"item_id": "R2", "description": "bad join", "point_delta": -1}]},
            {"task_id": "T2", "question_text": "q2", "sample_solution": "s2", "max_points": 3, "rubric": []}
        ]}"#;
    const ROSTER: &str = "student_id,display_name,email\ns1,Alice Chen,alice@uni.edu\ns2,Bob Li,\n";

    fn bundle(submissions: &str) -> AssignmentBundle {
        AssignmentBundle::new()
            .with_file(ASSIGNMENT_FILE, ASSIGNMENT)
            .with_file(ROSTER_FILE, ROSTER)
            .with_file(SUBMISSIONS_FILE, submissions)
    }

    const HEADER: &str = "student_id,task_id,answer_text,applied_rubric_item_ids,points_awarded\n";

    #[test]
    fn parses_and_fills_skipped_tasks() {
        let subs = format!("{HEADER}s1,T1,\"SELECT *\nFROM x\",R1;R2,1.5\ns1,T2,q,,3\ns2,T2,z,,1\n");
        let (a, students) = parse_bundle(&bundle(&subs)).unwrap();
        assert_eq!(a.tasks.len(), 2);
        assert_eq!(students.len(), 2);
        let s1 = &students[0];
        assert_eq!(s1.total_grade, 4.5);
        assert_eq!(s1.responses[0].answer_text, "SELECT *\nFROM x");
        assert_eq!(s1.responses[0].applied_rubric_item_ids.len(), 2);
        let s2 = &students[1];
        assert_eq!(s2.responses[0].answer_text, "");
        assert_eq!(s2.responses[0].points_awarded, 0.0);
        assert_eq!(s2.email, None);
        for s in &students {
            s.validate_against(&a).unwrap();
        }
    }

    #[test]
    fn dangling_task() {
        let subs = format!("{HEADER}s1,T9,x,,0\n");
        match parse_bundle(&bundle(&subs)) {
            Err(IngestError::DanglingReference { kind, id }) => {
                assert_eq!((kind.as_str(), id.as_str()), ("task", "T9"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_submissions_gives_empty_cohort() {
        let (a, students) = parse_bundle(&bundle(HEADER)).unwrap();
        assert_eq!(a.assignment_id, "a1");
        assert!(students.is_empty());
    }

    #[test]
    fn points_out_of_range_is_one_finding() {
        let subs = format!("{HEADER}s1,T1,x,,3\n");
        let findings = validate_bundle(&bundle(&subs));
        assert_eq!(findings.len(), 1);
        assert!(matches!(findings[0], ValidationFinding::PointsOutOfRange { .. }));
    }

    #[test]
    fn missing_roster() {
        let b = AssignmentBundle::new()
            .with_file(ASSIGNMENT_FILE, ASSIGNMENT)
            .with_file(SUBMISSIONS_FILE, HEADER);
        assert_eq!(
            validate_bundle(&b),
            vec![ValidationFinding::MissingFile {
                name: ROSTER_FILE.into()
            }]
        );
        assert!(matches!(parse_bundle(&b), Err(IngestError::MissingFile(n)) if n == ROSTER_FILE));
    }

    #[test]
    fn unknown_student_and_rubric_item() {
        let subs = format!("{HEADER}s3,T1,x,,0\ns1,T1,x,R7,0\n");
        let findings = validate_bundle(&bundle(&subs));
        assert_eq!(findings.len(), 2, "{findings:?}");
    }

    #[test]
    fn bad_points_and_duplicates_are_malformed() {
        let subs = format!("{HEADER}s1,T1,x,,abc\ns1,T2,x,,1\ns1,T2,y,,1\n");
        let findings = validate_bundle(&bundle(&subs));
        assert_eq!(findings.len(), 2, "{findings:?}");
        assert!(findings
            .iter()
            .all(|f| matches!(f, ValidationFinding::MalformedRow { .. })));
    }

    #[test]
    fn missing_header_column() {
        let subs = "student_id,task_id,answer_text\ns1,T1,x\n";
        let findings = validate_bundle(&bundle(subs));
        assert!(matches!(&findings[0], ValidationFinding::MalformedRow { line: 1, .. }));
    }

    #[test]
    fn invalid_assignment_json() {
        let b = bundle(HEADER).with_file(ASSIGNMENT_FILE, "{\"assignment_id\": 1");
        let findings = validate_bundle(&b);
        assert_eq!(findings.len(), 1);
        let b = bundle(HEADER).with_file(
            ASSIGNMENT_FILE,
            r#"{"assignment_id":"a","title":"t","context_text":"c","tasks":[]}"#,
        );
        assert!(matches!(
            validate_bundle(&b)[0],
            ValidationFinding::InvalidAssignment { .. }
        ));
    }
}
