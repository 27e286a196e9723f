//! Shared domain types and the feedback lifecycle state machine.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that a student's total grade matches the
/// sum of their per-task points.
pub const GRADE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSpec {
    pub assignment_id: String,
    pub title: String,
    /// Shared background block (schema declaration etc.) injected into every prompt.
    pub context_text: String,
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub question_text: String,
    pub sample_solution: String,
    pub max_points: f64,
    #[serde(default)]
    pub rubric: Vec<RubricItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricItem {
    pub item_id: String,
    pub description: String,
    pub point_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub student_id: String,
    pub display_name: String,
    #[serde(default)]
    pub email: Option<String>,
    pub responses: Vec<TaskResponse>,
    pub total_grade: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResponse {
    pub task_id: String,
    pub answer_text: String,
    #[serde(default)]
    pub applied_rubric_item_ids: BTreeSet<String>,
    pub points_awarded: f64,
}

/// Violations of the structural invariants of the assignment and student types.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("assignment has no tasks")]
    NoTasks,
    #[error("assignment context_text is empty")]
    EmptyContext,
    #[error("duplicate task id {0}")]
    DuplicateTask(String),
    #[error("task {task}: {field} is empty")]
    EmptyField { task: String, field: &'static str },
    #[error("task {0}: max_points must be a non-negative number")]
    BadMaxPoints(String),
    #[error("task {task}: duplicate rubric item {item}")]
    DuplicateRubricItem { task: String, item: String },
    #[error("student {student}: expected {expected} responses, found {found}")]
    ResponseCount {
        student: String,
        expected: usize,
        found: usize,
    },
    #[error("student {student}: unknown task {task}")]
    UnknownTask { student: String, task: String },
    #[error("student {student}, task {task}: rubric item {item} does not exist")]
    UnknownRubricItem {
        student: String,
        task: String,
        item: String,
    },
    #[error("student {student}, task {task}: points {points} outside [0, {max}]")]
    PointsOutOfRange {
        student: String,
        task: String,
        points: f64,
        max: f64,
    },
    #[error("student {student}: total_grade {total} does not equal sum of points {sum}")]
    TotalMismatch { student: String, total: f64, sum: f64 },
}

impl AssignmentSpec {
    pub fn task(&self, task_id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.tasks.is_empty() {
            return Err(ModelError::NoTasks);
        }
        if self.context_text.trim().is_empty() {
            return Err(ModelError::EmptyContext);
        }
        let mut seen = HashSet::new();
        for task in &self.tasks {
            if !seen.insert(task.task_id.as_str()) {
                return Err(ModelError::DuplicateTask(task.task_id.clone()));
            }
            task.validate()?;
        }
        Ok(())
    }
}

impl TaskSpec {
    pub fn rubric_item(&self, item_id: &str) -> Option<&RubricItem> {
        self.rubric.iter().find(|r| r.item_id == item_id)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let empty = |field| ModelError::EmptyField {
            task: self.task_id.clone(),
            field,
        };
        if self.question_text.trim().is_empty() {
            return Err(empty("question_text"));
        }
        if self.sample_solution.trim().is_empty() {
            return Err(empty("sample_solution"));
        }
        if !self.max_points.is_finite() || self.max_points < 0.0 {
            return Err(ModelError::BadMaxPoints(self.task_id.clone()));
        }
        let mut seen = HashSet::new();
        for item in &self.rubric {
            if !seen.insert(item.item_id.as_str()) {
                return Err(ModelError::DuplicateRubricItem {
                    task: self.task_id.clone(),
                    item: item.item_id.clone(),
                });
            }
            if item.description.trim().is_empty() {
                return Err(empty("rubric description"));
            }
        }
        Ok(())
    }
}

impl StudentRecord {
    pub fn response(&self, task_id: &str) -> Option<&TaskResponse> {
        self.responses.iter().find(|r| r.task_id == task_id)
    }

    /// Checks this record against the assignment it was graded for.
    pub fn validate_against(&self, assignment: &AssignmentSpec) -> Result<(), ModelError> {
        if self.responses.len() != assignment.tasks.len() {
            return Err(ModelError::ResponseCount {
                student: self.student_id.clone(),
                expected: assignment.tasks.len(),
                found: self.responses.len(),
            });
        }
        let mut sum = 0.0;
        for response in &self.responses {
            let task = assignment
                .task(&response.task_id)
                .ok_or_else(|| ModelError::UnknownTask {
                    student: self.student_id.clone(),
                    task: response.task_id.clone(),
                })?;
            if let Some(item) = response
                .applied_rubric_item_ids
                .iter()
                .find(|id| task.rubric_item(id).is_none())
            {
                return Err(ModelError::UnknownRubricItem {
                    student: self.student_id.clone(),
                    task: task.task_id.clone(),
                    item: item.clone(),
                });
            }
            let points = response.points_awarded;
            if !(0.0..=task.max_points).contains(&points) {
                return Err(ModelError::PointsOutOfRange {
                    student: self.student_id.clone(),
                    task: task.task_id.clone(),
                    points,
                    max: task.max_points,
                });
            }
            sum += points;
        }
        if (sum - self.total_grade).abs() > GRADE_TOLERANCE {
            return Err(ModelError::TotalMismatch {
                student: self.student_id.clone(),
                total: self.total_grade,
                sum,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    Base,
    Advanced,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 2] = [PromptVariant::Base, PromptVariant::Advanced];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::Base => "base",
            PromptVariant::Advanced => "advanced",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(PromptVariant::Base),
            "advanced" => Ok(PromptVariant::Advanced),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

/// The four pedagogical criteria feedback is scored against, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Constructive,
    Empathetic,
    DetailedActionable,
    SelfReflectionIndependence,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Constructive,
        Criterion::Empathetic,
        Criterion::DetailedActionable,
        Criterion::SelfReflectionIndependence,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Constructive => "constructive",
            Criterion::Empathetic => "empathetic",
            Criterion::DetailedActionable => "detailed_actionable",
            Criterion::SelfReflectionIndependence => "self_reflection_independence",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Traffic-light review category. Ordered from most to least review need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageCategory {
    ReviewRequired,
    ReviewDesirable,
    ReadyToDeliver,
}

impl TriageCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            TriageCategory::ReviewRequired => "review_required",
            TriageCategory::ReviewDesirable => "review_desirable",
            TriageCategory::ReadyToDeliver => "ready_to_deliver",
        }
    }

    pub fn colour(self) -> &'static str {
        match self {
            TriageCategory::ReviewRequired => "red",
            TriageCategory::ReviewDesirable => "amber",
            TriageCategory::ReadyToDeliver => "green",
        }
    }

    /// Accepts both the snake_case name and the traffic-light colour.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "review_required" | "red" => Some(TriageCategory::ReviewRequired),
            "review_desirable" | "amber" => Some(TriageCategory::ReviewDesirable),
            "ready_to_deliver" | "green" => Some(TriageCategory::ReadyToDeliver),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionScore {
    pub criterion: Criterion,
    pub score: u8,
    pub justification: String,
}

/// How a justification quote was found in the feedback text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Normalized,
    Unresolved,
}

/// Byte span (`start..end`, exclusive) of a criterion's quote in the feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightSpan {
    pub criterion: Criterion,
    pub start: usize,
    pub end: usize,
    pub resolved: bool,
    pub match_kind: MatchKind,
}

impl HighlightSpan {
    pub fn unresolved(criterion: Criterion) -> Self {
        HighlightSpan {
            criterion,
            start: 0,
            end: 0,
            resolved: false,
            match_kind: MatchKind::Unresolved,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// One score per criterion, in [`Criterion::ALL`] order.
    pub scores: Vec<CriterionScore>,
    pub mean_score: f64,
    pub spans: Vec<HighlightSpan>,
    /// Hex SHA-256 of the evaluated feedback text.
    pub feedback_hash: String,
}

impl EvaluationReport {
    pub fn score(&self, criterion: Criterion) -> Option<u8> {
        self.scores.iter().find(|s| s.criterion == criterion).map(|s| s.score)
    }

    pub fn min_score(&self) -> u8 {
        self.scores.iter().map(|s| s.score).min().unwrap_or(0)
    }

    pub fn all_spans_resolved(&self) -> bool {
        self.spans.iter().all(|s| s.resolved)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleState {
    Queued,
    GeneratingTasks,
    Synthesizing,
    Evaluating,
    Triaged,
    Approved,
    Delivered,
    Viewed,
    Flagged,
    Failed,
}

impl LifecycleState {
    pub const ALL: [LifecycleState; 10] = [
        LifecycleState::Queued,
        LifecycleState::GeneratingTasks,
        LifecycleState::Synthesizing,
        LifecycleState::Evaluating,
        LifecycleState::Triaged,
        LifecycleState::Approved,
        LifecycleState::Delivered,
        LifecycleState::Viewed,
        LifecycleState::Flagged,
        LifecycleState::Failed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LifecycleState::Queued => "queued",
            LifecycleState::GeneratingTasks => "generating_tasks",
            LifecycleState::Synthesizing => "synthesizing",
            LifecycleState::Evaluating => "evaluating",
            LifecycleState::Triaged => "triaged",
            LifecycleState::Approved => "approved",
            LifecycleState::Delivered => "delivered",
            LifecycleState::Viewed => "viewed",
            LifecycleState::Flagged => "flagged",
            LifecycleState::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.as_str() == s)
    }

    /// States in which the record carries an evaluation (triaged or later).
    pub fn is_post_triage(self) -> bool {
        matches!(
            self,
            LifecycleState::Triaged
                | LifecycleState::Approved
                | LifecycleState::Delivered
                | LifecycleState::Viewed
                | LifecycleState::Flagged
        )
    }

    /// States the pipeline is still working through.
    pub fn is_pre_triage(self) -> bool {
        matches!(
            self,
            LifecycleState::Queued
                | LifecycleState::GeneratingTasks
                | LifecycleState::Synthesizing
                | LifecycleState::Evaluating
        )
    }
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleEvent {
    StartGeneration,
    TasksCompleted,
    SynthesisCompleted,
    EvaluationCompleted,
    Approve,
    Regenerate,
    Deliver,
    MarkViewed,
    Flag,
    Fail,
}

impl LifecycleEvent {
    pub const ALL: [LifecycleEvent; 10] = [
        LifecycleEvent::StartGeneration,
        LifecycleEvent::TasksCompleted,
        LifecycleEvent::SynthesisCompleted,
        LifecycleEvent::EvaluationCompleted,
        LifecycleEvent::Approve,
        LifecycleEvent::Regenerate,
        LifecycleEvent::Deliver,
        LifecycleEvent::MarkViewed,
        LifecycleEvent::Flag,
        LifecycleEvent::Fail,
    ];
}

impl fmt::Display for LifecycleEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        f.write_str(&s)
    }
}

/// The transition table. Returns the target state for a legal edge.
pub fn next_state(from: LifecycleState, event: LifecycleEvent) -> Option<LifecycleState> {
    use LifecycleEvent as E;
    use LifecycleState as S;
    match (from, event) {
        (S::Queued, E::StartGeneration) => Some(S::GeneratingTasks),
        (S::GeneratingTasks, E::TasksCompleted) => Some(S::Synthesizing),
        (S::Synthesizing, E::SynthesisCompleted) => Some(S::Evaluating),
        (S::Evaluating, E::EvaluationCompleted) => Some(S::Triaged),
        (S::Triaged, E::Approve) => Some(S::Approved),
        (S::Triaged | S::Flagged | S::Failed, E::Regenerate) => Some(S::Queued),
        (S::Approved, E::Deliver) => Some(S::Delivered),
        (S::Delivered, E::MarkViewed) => Some(S::Viewed),
        (S::Delivered | S::Viewed, E::Flag) => Some(S::Flagged),
        (s, E::Fail) if s.is_pre_triage() => Some(S::Failed),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub timestamp: DateTime<Utc>,
    pub actor: String,
    pub event: LifecycleEvent,
    pub from: LifecycleState,
    pub to: LifecycleState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionError {
    #[error("illegal transition: {event} from {from}")]
    IllegalTransition {
        from: LifecycleState,
        event: LifecycleEvent,
    },
    #[error("cannot enter {0} without an evaluation report")]
    MissingEvaluation(LifecycleState),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("record has no feedback text")]
pub struct EmptyFeedback;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub record_id: String,
    pub student_id: String,
    pub variant: PromptVariant,
    pub state: LifecycleState,
    #[serde(default)]
    pub task_feedbacks: BTreeMap<String, String>,
    #[serde(default)]
    pub assignment_feedback: String,
    #[serde(default)]
    pub edited_feedback: Option<String>,
    #[serde(default)]
    pub evaluation: Option<EvaluationReport>,
    #[serde(default)]
    pub triage: Option<TriageCategory>,
    #[serde(default)]
    pub audit: Vec<AuditEntry>,
}

impl FeedbackRecord {
    /// A fresh record in `Queued` with an empty audit trail.
    pub fn new(record_id: impl Into<String>, student_id: impl Into<String>, variant: PromptVariant) -> Self {
        FeedbackRecord {
            record_id: record_id.into(),
            student_id: student_id.into(),
            variant,
            state: LifecycleState::Queued,
            task_feedbacks: BTreeMap::new(),
            assignment_feedback: String::new(),
            edited_feedback: None,
            evaluation: None,
            triage: None,
            audit: Vec::new(),
        }
    }

    /// Canonical record id for one student's feedback in one variant.
    pub fn canonical_id(assignment_id: &str, student_id: &str, variant: PromptVariant) -> String {
        format!("{assignment_id}:{student_id}:{variant}")
    }

    pub fn transition(&self, event: LifecycleEvent, actor: &str) -> Result<FeedbackRecord, TransitionError> {
        self.transition_with_note(event, actor, None)
    }

    /// Applies `event`, returning a new record with one more audit entry.
    pub fn transition_with_note(
        &self,
        event: LifecycleEvent,
        actor: &str,
        note: Option<String>,
    ) -> Result<FeedbackRecord, TransitionError> {
        let to = next_state(self.state, event).ok_or(TransitionError::IllegalTransition {
            from: self.state,
            event,
        })?;
        if to.is_post_triage() && self.evaluation.is_none() {
            return Err(TransitionError::MissingEvaluation(to));
        }
        let mut next = self.clone();
        next.state = to;
        next.audit.push(AuditEntry {
            timestamp: Utc::now(),
            actor: actor.to_owned(),
            event,
            from: self.state,
            to,
            note,
        });
        Ok(next)
    }

    /// The text that would be delivered: the instructor edit if any, else the generated feedback.
    pub fn effective_feedback_text(&self) -> Result<&str, EmptyFeedback> {
        match self.edited_feedback.as_deref() {
            Some(edited) if !edited.is_empty() => Ok(edited),
            _ if !self.assignment_feedback.is_empty() => Ok(&self.assignment_feedback),
            _ => Err(EmptyFeedback),
        }
    }
}

/// Checks that `audit` is a legal chain of transitions starting at `from`
/// and returns the state it ends in.
pub fn replay_audit(from: LifecycleState, audit: &[AuditEntry]) -> Result<LifecycleState, TransitionError> {
    audit
        .iter()
        .try_fold(from, |state, entry| match next_state(state, entry.event) {
            Some(to) if entry.from == state && entry.to == to => Ok(to),
            _ => Err(TransitionError::IllegalTransition {
                from: state,
                event: entry.event,
            }),
        })
}

/// Anything that wants to observe records as they move through the lifecycle.
pub trait RecordSink: Send + Sync {
    fn save(&self, record: &FeedbackRecord) -> Result<(), String>;
}

/// Sink that discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl RecordSink for NullSink {
    fn save(&self, _record: &FeedbackRecord) -> Result<(), String> {
        Ok(())
    }
}
