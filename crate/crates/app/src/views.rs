//! Serializable shapes returned by the service to the server and CLI.

use std::collections::BTreeMap;

use copilot_core::analytics::AchievementLevel;
use copilot_core::evaluation::{byte_to_char_offset, TriageConfig};
use copilot_core::{
    AuditEntry, Criterion, FeedbackRecord, HighlightSpan, LifecycleState, MatchKind, PromptVariant, RubricItem,
    TaskResponse, TriageCategory,
};
use copilot_pipeline::GenerationJob;
use copilot_store::VersionedRecord;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub assignment_id: String,
    pub title: String,
    pub tasks: usize,
    pub students: usize,
}

/// One row of the review queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub record_id: String,
    pub student_id: String,
    pub variant: PromptVariant,
    pub state: LifecycleState,
    pub triage: Option<TriageCategory>,
    pub colour: Option<String>,
    pub mean_score: Option<f64>,
    pub min_score: Option<u8>,
    pub achievement: Option<AchievementLevel>,
    pub version: u64,
}

impl From<&VersionedRecord> for RecordSummary {
    fn from(v: &VersionedRecord) -> Self {
        let r = &v.record;
        RecordSummary {
            record_id: r.record_id.clone(),
            student_id: r.student_id.clone(),
            variant: r.variant,
            state: r.state,
            triage: r.triage,
            colour: r.triage.map(|t| t.colour().to_owned()),
            mean_score: r.evaluation.as_ref().map(|e| e.mean_score),
            min_score: r.evaluation.as_ref().map(|e| e.min_score()),
            achievement: v.achievement,
            version: v.version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuePage {
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub items: Vec<RecordSummary>,
}

/// A highlight span in both byte and code-point offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanView {
    pub criterion: Criterion,
    pub resolved: bool,
    pub match_kind: MatchKind,
    pub byte_start: usize,
    pub byte_end: usize,
    pub char_start: usize,
    pub char_end: usize,
    /// The highlighted substring; empty when unresolved.
    pub text: String,
}

impl SpanView {
    pub fn new(feedback: &str, span: &HighlightSpan) -> Self {
        let (start, end) = if span.resolved && feedback.get(span.start..span.end).is_some() {
            (span.start, span.end)
        } else {
            (0, 0)
        };
        SpanView {
            criterion: span.criterion,
            resolved: span.resolved && end > start,
            match_kind: span.match_kind,
            byte_start: start,
            byte_end: end,
            char_start: byte_to_char_offset(feedback, start),
            char_end: byte_to_char_offset(feedback, end),
            text: feedback[start..end].to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreView {
    pub criterion: Criterion,
    pub score: u8,
    pub justification: String,
    pub span: SpanView,
}

/// Task context shown next to the feedback during spot checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    pub task_id: String,
    pub question_text: String,
    pub sample_solution: String,
    pub max_points: f64,
    pub rubric: Vec<RubricItem>,
    pub response: Option<TaskResponse>,
    pub task_feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackDetail {
    pub record_id: String,
    pub assignment_id: String,
    pub student_id: String,
    pub student_name: Option<String>,
    pub variant: PromptVariant,
    pub state: LifecycleState,
    pub version: u64,
    pub achievement: Option<AchievementLevel>,
    pub triage: Option<TriageCategory>,
    pub colour: Option<String>,
    /// The text spans refer to: the instructor edit if any, else the generated text.
    pub feedback_text: String,
    pub generated_text: String,
    pub edited: bool,
    pub mean_score: Option<f64>,
    pub scores: Vec<ScoreView>,
    pub tasks: Vec<TaskContext>,
    pub audit: Vec<AuditEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecordStatus {
    pub record_id: String,
    pub student_id: String,
    pub state: LifecycleState,
    pub triage: Option<TriageCategory>,
}

/// Job progress: per-state counts and each record's current state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub job: GenerationJob,
    pub counts: BTreeMap<LifecycleState, usize>,
    pub records: Vec<JobRecordStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageSummary {
    pub thresholds: TriageConfig,
    /// Triaged records per colour.
    pub counts: BTreeMap<String, usize>,
    /// Records whose category changed.
    pub changed: Vec<String>,
}

/// What a student receives: the text and the capability that lets them
/// mark it viewed or flag it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub record_id: String,
    pub student_id: String,
    pub display_name: Option<String>,
    pub email: Option<String>,
    pub feedback_text: String,
    pub capability: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryFailure {
    pub record_id: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DeliveryReport {
    pub delivered: Vec<Delivery>,
    pub failed: Vec<DeliveryFailure>,
}

/// Response to a student-side event. Carries nothing about other students.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentView {
    pub record_id: String,
    pub state: LifecycleState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub record_id: String,
    pub assignment_id: String,
    pub student_id: String,
    pub variant: PromptVariant,
    pub state: LifecycleState,
    pub triage: Option<TriageCategory>,
    pub mean_score: Option<f64>,
    pub constructive: Option<u8>,
    pub empathetic: Option<u8>,
    pub detailed_actionable: Option<u8>,
    pub self_reflection_independence: Option<u8>,
    pub edited: bool,
    pub version: u64,
    pub feedback_text: String,
}

impl From<&VersionedRecord> for ExportRow {
    fn from(v: &VersionedRecord) -> Self {
        let r = &v.record;
        let score = |c| r.evaluation.as_ref().and_then(|e| e.score(c));
        ExportRow {
            record_id: r.record_id.clone(),
            assignment_id: assignment_of(r).to_owned(),
            student_id: r.student_id.clone(),
            variant: r.variant,
            state: r.state,
            triage: r.triage,
            mean_score: r.evaluation.as_ref().map(|e| e.mean_score),
            constructive: score(Criterion::Constructive),
            empathetic: score(Criterion::Empathetic),
            detailed_actionable: score(Criterion::DetailedActionable),
            self_reflection_independence: score(Criterion::SelfReflectionIndependence),
            edited: r.edited_feedback.as_deref().is_some_and(|t| !t.is_empty()),
            version: v.version,
            feedback_text: r.effective_feedback_text().unwrap_or_default().to_owned(),
        }
    }
}

/// Assignment id encoded in a canonical record id.
pub fn assignment_of(record: &FeedbackRecord) -> &str {
    let suffix = format!(":{}:{}", record.student_id, record.variant);
    record.record_id.strip_suffix(suffix.as_str()).unwrap_or("")
}
