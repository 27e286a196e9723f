#![allow(dead_code)]

use std::path::Path;

use chrono::{TimeZone, Utc};
use copilot_core::ingest::{parse_bundle, AssignmentBundle};
use copilot_core::{
    AssignmentSpec, Criterion, CriterionScore, EvaluationReport, FeedbackRecord, HighlightSpan, LifecycleEvent,
    LifecycleState, PromptVariant, StudentRecord, TriageCategory,
};

pub fn demo() -> (AssignmentSpec, Vec<StudentRecord>) {
    let bundle = AssignmentBundle::from_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo/bundle")).unwrap();
    parse_bundle(&bundle).unwrap()
}

pub fn report(scores: [u8; 4]) -> EvaluationReport {
    EvaluationReport {
        scores: Criterion::ALL
            .iter()
            .zip(scores)
            .map(|(&criterion, score)| CriterionScore {
                criterion,
                score,
                justification: "ok".into(),
            })
            .collect(),
        mean_score: scores.iter().map(|&s| f64::from(s)).sum::<f64>() / 4.0,
        spans: Criterion::ALL.iter().map(|&c| HighlightSpan::unresolved(c)).collect(),
        feedback_hash: "00".into(),
    }
}

/// Applies `event`, filling in pipeline outputs where the transition needs them.
pub fn step(r: &FeedbackRecord, event: LifecycleEvent, scores: [u8; 4]) -> FeedbackRecord {
    let mut r = r.clone();
    match event {
        LifecycleEvent::TasksCompleted => {
            r.task_feedbacks.insert("T1".into(), "Task feedback.".into());
        }
        LifecycleEvent::SynthesisCompleted => r.assignment_feedback = "Overall feedback.".into(),
        LifecycleEvent::EvaluationCompleted => {
            r.evaluation = Some(report(scores));
            r.triage = Some(match scores.iter().min().unwrap() {
                8.. => TriageCategory::ReadyToDeliver,
                6..=7 => TriageCategory::ReviewDesirable,
                _ => TriageCategory::ReviewRequired,
            });
        }
        _ => {}
    }
    r.transition(event, "tester").unwrap()
}

pub fn triaged(assignment: &str, student: &str, variant: PromptVariant, scores: [u8; 4]) -> FeedbackRecord {
    let mut r = FeedbackRecord::new(
        FeedbackRecord::canonical_id(assignment, student, variant),
        student,
        variant,
    );
    for e in [
        LifecycleEvent::StartGeneration,
        LifecycleEvent::TasksCompleted,
        LifecycleEvent::SynthesisCompleted,
        LifecycleEvent::EvaluationCompleted,
    ] {
        r = step(&r, e, scores);
    }
    assert_eq!(r.state, LifecycleState::Triaged);
    r
}

/// Pins every audit timestamp so records are reproducible across processes.
pub fn pin_timestamps(r: &mut FeedbackRecord) {
    for (i, e) in r.audit.iter_mut().enumerate() {
        e.timestamp = Utc.timestamp_opt(1_700_000_000 + i as i64, 123_456_789).unwrap();
    }
}
