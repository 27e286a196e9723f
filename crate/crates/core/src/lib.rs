//! Domain model, bundle ingestion, pseudonymization, prompt rendering,
//! evaluation parsing and the statistics engine for rubric-grounded
//! feedback generation.
//!
//! The I/O-free pieces live here so the client, pipeline, store, server and
//! CLI crates share one definition of every type and rule.

pub mod analytics;
pub mod evaluation;
pub mod ingest;
pub mod model;
pub mod privacy;
pub mod prompting;
mod scalar;

pub use scalar::Scalar;

pub use model::{
    next_state, replay_audit, AssignmentSpec, AuditEntry, Criterion, CriterionScore, EmptyFeedback, EvaluationReport,
    FeedbackRecord, HighlightSpan, LifecycleEvent, LifecycleState, MatchKind, NullSink, PromptVariant, RecordSink,
    RubricItem, StudentRecord, TaskResponse, TaskSpec, TransitionError, TriageCategory,
};

pub type AnovaResultF64 = analytics::AnovaResult<f64>;
pub type AnovaResultF32 = analytics::AnovaResult<f32>;
pub type TwoWayAnovaF64 = analytics::TwoWayAnova<f64>;
pub type ManovaResultF64 = analytics::ManovaResult<f64>;
pub type ManovaResultF32 = analytics::ManovaResult<f32>;
pub type PairwiseComparisonF64 = analytics::PairwiseComparison<f64>;
pub type AchievementSplitF64 = analytics::AchievementSplit<f64>;
