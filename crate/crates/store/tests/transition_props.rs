//! Random illegal writes are rejected without touching stored state.

mod common;

use common::{step, triaged};
use copilot_core::{next_state, AuditEntry, FeedbackRecord, LifecycleEvent, LifecycleState, PromptVariant};
use copilot_store::{Store, StoreError};
use proptest::prelude::*;

fn any_state() -> impl Strategy<Value = LifecycleState> {
    prop::sample::select(LifecycleState::ALL.to_vec())
}

fn any_event() -> impl Strategy<Value = LifecycleEvent> {
    prop::sample::select(LifecycleEvent::ALL.to_vec())
}

/// Walks the lifecycle with legal events chosen by `picks`.
fn walk(picks: &[usize]) -> FeedbackRecord {
    let mut r = FeedbackRecord::new("a:u1:base", "u1", PromptVariant::Base);
    for &p in picks {
        let legal: Vec<_> = LifecycleEvent::ALL
            .into_iter()
            .filter(|&e| next_state(r.state, e).is_some())
            .filter(|&e| {
                // Stay on paths where transitions can attach an evaluation.
                let to = next_state(r.state, e).unwrap();
                !to.is_post_triage() || r.evaluation.is_some() || e == LifecycleEvent::EvaluationCompleted
            })
            .collect();
        if legal.is_empty() {
            break;
        }
        r = step(&r, legal[p % legal.len()], [8, 7, 9, 6]);
    }
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn illegal_transitions_are_always_rejected(
        picks in prop::collection::vec(0usize..10, 0..12),
        event in any_event(),
        to in any_state(),
    ) {
        let store = Store::open_in_memory().unwrap();
        let r = walk(&picks);
        store.put_record(&r, None).unwrap();
        let before = store.get_record(&r.record_id).unwrap();

        // A forged entry claiming `event` moves the record to `to`.
        let legal = next_state(r.state, event) == Some(to);
        prop_assume!(!legal);
        let mut forged = r.clone();
        forged.state = to;
        if to.is_post_triage() && forged.evaluation.is_none() {
            forged.evaluation = Some(common::report([9, 9, 9, 9]));
        }
        forged.audit.push(AuditEntry {
            timestamp: chrono::Utc::now(),
            actor: "mallory".into(),
            event,
            from: r.state,
            to,
            note: None,
        });
        let res = store.put_record(&forged, Some(before.version));
        prop_assert!(matches!(res, Err(StoreError::IllegalTransition { .. })), "{:?}", res);
        prop_assert_eq!(store.get_record(&r.record_id).unwrap(), before);
    }

    #[test]
    fn state_jumps_without_audit_are_rejected(
        picks in prop::collection::vec(0usize..10, 0..12),
        to in any_state(),
    ) {
        let store = Store::open_in_memory().unwrap();
        let r = walk(&picks);
        store.put_record(&r, None).unwrap();
        let before = store.get_record(&r.record_id).unwrap();
        prop_assume!(to != r.state);
        let mut jumped = r.clone();
        jumped.state = to;
        if to.is_post_triage() {
            jumped.evaluation = Some(common::report([9, 9, 9, 9]));
        }
        let res = store.put_record(&jumped, Some(before.version));
        prop_assert!(matches!(res, Err(StoreError::StateMismatch { .. })), "{:?}", res);
        prop_assert_eq!(store.get_record(&r.record_id).unwrap(), before);
    }

    #[test]
    fn legal_walks_are_always_accepted(picks in prop::collection::vec(0usize..10, 0..16)) {
        let store = Store::open_in_memory().unwrap();
        let mut r = FeedbackRecord::new("a:u1:base", "u1", PromptVariant::Base);
        let mut version = store.put_record(&r, None).unwrap();
        let end = walk(&picks);
        for i in 0..end.audit.len() {
            let mut partial = end.clone();
            partial.audit.truncate(i + 1);
            partial.state = partial.audit[i].to;
            r = partial;
            version = store.put_record(&r, Some(version)).unwrap();
        }
        prop_assert_eq!(store.get_record(&r.record_id).unwrap().record.state, end.state);
        prop_assert_eq!(version as usize, end.audit.len() + 1);
    }
}

#[test]
fn delivered_is_unreachable_without_approval_through_the_store() {
    let store = Store::open_in_memory().unwrap();
    let r = triaged("a", "u1", PromptVariant::Base, [9, 9, 9, 9]);
    store.put_record(&r, None).unwrap();
    let res = store.apply_event(&r.record_id, Some(1), LifecycleEvent::Deliver, "x", None);
    assert!(matches!(
        res,
        Err(StoreError::IllegalTransition {
            from: LifecycleState::Triaged,
            ..
        })
    ));
}
