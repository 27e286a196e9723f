mod common;

use std::sync::Arc;

use common::{demo, report, step, triaged};
use copilot_core::analytics::AchievementLevel;
use copilot_core::privacy::build_pseudonym_map;
use copilot_core::{FeedbackRecord, LifecycleEvent, LifecycleState, PromptVariant, TriageCategory};
use copilot_pipeline::{GenerationJob, JobStatus};
use copilot_store::{RecordQuery, SortOrder, Store, StoreError, MAX_LIMIT, SCHEMA_VERSION};

fn seeded() -> Store {
    let store = Store::open_in_memory().unwrap();
    let (spec, students) = demo();
    store.put_assignment(&spec, &students).unwrap();
    store
}

#[test]
fn fresh_database_is_at_current_schema_version() {
    let store = Store::open_in_memory().unwrap();
    assert_eq!(store.schema_version().unwrap(), SCHEMA_VERSION);
}

#[test]
fn newer_schema_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.db");
    drop(Store::open(&path).unwrap());
    let conn = rusqlite::Connection::open(&path).unwrap();
    conn.pragma_update(None, "user_version", SCHEMA_VERSION + 1).unwrap();
    drop(conn);
    match Store::open(&path) {
        Err(StoreError::UnsupportedSchema { found, supported }) => {
            assert_eq!((found, supported), (SCHEMA_VERSION + 1, SCHEMA_VERSION));
        }
        other => panic!("expected UnsupportedSchema, got {other:?}"),
    }
}

#[test]
fn assignment_students_and_pseudonyms_round_trip() {
    let store = Store::open_in_memory().unwrap();
    let (spec, students) = demo();
    store.put_assignment(&spec, &students).unwrap();
    assert_eq!(store.get_assignment(&spec.assignment_id).unwrap(), spec);
    let mut sorted = students.clone();
    sorted.sort_by(|a, b| a.student_id.cmp(&b.student_id));
    assert_eq!(store.get_students(&spec.assignment_id).unwrap(), sorted);
    assert_eq!(store.list_assignments().unwrap(), vec![spec.assignment_id.clone()]);

    let map = build_pseudonym_map(&students, 7).unwrap();
    store.put_pseudonym_map(&spec.assignment_id, &map).unwrap();
    let back = store.get_pseudonym_map(&spec.assignment_id).unwrap();
    assert_eq!(back.forward, map.forward);
    assert_eq!(back.pii_index, map.pii_index);

    // Re-ingesting replaces the cohort but keeps the pseudonym map.
    store.put_assignment(&spec, &students[..3]).unwrap();
    assert_eq!(store.get_students(&spec.assignment_id).unwrap().len(), 3);
    assert!(store.get_pseudonym_map(&spec.assignment_id).is_ok());

    assert!(matches!(store.get_assignment("nope"), Err(StoreError::NotFound(_))));
    assert!(matches!(store.get_pseudonym_map("nope"), Err(StoreError::NotFound(_))));
}

#[test]
fn achievement_levels_follow_the_tertile_rule() {
    let store = seeded();
    let (spec, students) = demo();
    let levels = store.achievement_levels(&spec.assignment_id).unwrap();
    assert_eq!(levels.len(), students.len());

    // Independent oracle: type-7 percentiles by hand.
    let mut g: Vec<f64> = students.iter().map(|s| s.total_grade).collect();
    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| {
        let h = (g.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        g[lo] + (h - lo as f64) * (g[(lo + 1).min(g.len() - 1)] - g[lo])
    };
    let (p33, p66) = (q(0.33), q(0.66));
    for s in &students {
        let want = if s.total_grade < p33 {
            AchievementLevel::Low
        } else if s.total_grade < p66 {
            AchievementLevel::Medium
        } else {
            AchievementLevel::High
        };
        assert_eq!(levels[&s.student_id], want, "{}", s.student_id);
    }
}

#[test]
fn small_cohorts_have_no_achievement_level() {
    let store = Store::open_in_memory().unwrap();
    let (spec, students) = demo();
    store.put_assignment(&spec, &students[..2]).unwrap();
    assert!(store.achievement_levels(&spec.assignment_id).unwrap().is_empty());
}

#[test]
fn new_records_require_no_version_and_get_version_one() {
    let store = seeded();
    let r = FeedbackRecord::new("a:u1:base", "u1", PromptVariant::Base);
    assert_eq!(store.put_record(&r, None).unwrap(), 1);
    match store.put_record(&r, None) {
        Err(StoreError::ConcurrentModification {
            expected: None,
            current: Some(1),
            ..
        }) => {}
        other => panic!("{other:?}"),
    }
    let other = FeedbackRecord::new("a:u2:base", "u2", PromptVariant::Base);
    assert!(matches!(
        store.put_record(&other, Some(1)),
        Err(StoreError::ConcurrentModification {
            expected: Some(1),
            current: None,
            ..
        })
    ));
}

#[test]
fn stale_version_is_rejected_and_nothing_changes() {
    let store = seeded();
    let r = triaged("a", "u1", PromptVariant::Base, [9, 9, 9, 9]);
    store.put_record(&r, None).unwrap();
    let v = store.get_record(&r.record_id).unwrap();
    assert_eq!(v.version, 1);

    let approved = v.record.transition(LifecycleEvent::Approve, "alice").unwrap();
    assert_eq!(store.put_record(&approved, Some(1)).unwrap(), 2);

    let regenerated = v.record.transition(LifecycleEvent::Regenerate, "bob").unwrap();
    match store.put_record(&regenerated, Some(1)) {
        Err(StoreError::ConcurrentModification {
            expected: Some(1),
            current: Some(2),
            ..
        }) => {}
        other => panic!("{other:?}"),
    }
    let now = store.get_record(&r.record_id).unwrap();
    assert_eq!(now.version, 2);
    assert_eq!(now.record, approved);
}

#[test]
fn concurrent_writers_with_the_same_token_have_one_winner() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("race.db");
    let r = triaged("a", "u1", PromptVariant::Base, [9, 9, 9, 9]);
    Store::open(&path).unwrap().put_record(&r, None).unwrap();

    // Half the writers share one connection, half have their own.
    let shared = Arc::new(Store::open(&path).unwrap());
    let handles: Vec<_> = (0..16)
        .map(|i| {
            let path = path.clone();
            let shared = shared.clone();
            let r = r.clone();
            std::thread::spawn(move || {
                let own;
                let store: &Store = if i % 2 == 0 {
                    &shared
                } else {
                    own = Store::open(&path).unwrap();
                    &own
                };
                let event = if i % 3 == 0 {
                    LifecycleEvent::Regenerate
                } else {
                    LifecycleEvent::Approve
                };
                let next = r.transition(event, &format!("writer{i}")).unwrap();
                store.put_record(&next, Some(1))
            })
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let wins = results.iter().filter(|r| r.is_ok()).count();
    assert_eq!(wins, 1, "{results:?}");
    for r in results.iter().filter(|r| r.is_err()) {
        assert!(matches!(r, Err(StoreError::ConcurrentModification { .. })), "{r:?}");
    }
    let stored = shared.get_record(&r.record_id).unwrap();
    assert_eq!(stored.version, 2);
    assert_eq!(stored.record.audit.len(), r.audit.len() + 1);
}

#[test]
fn apply_event_checks_token_and_transition() {
    let store = seeded();
    let r = triaged("a", "u1", PromptVariant::Base, [9, 9, 9, 9]);
    store.put_record(&r, None).unwrap();
    let v = store
        .apply_event(&r.record_id, Some(1), LifecycleEvent::Approve, "alice", None)
        .unwrap();
    assert_eq!((v.version, v.record.state), (2, LifecycleState::Approved));
    assert_eq!(v.record.audit.last().unwrap().actor, "alice");
    assert!(matches!(
        store.apply_event(&r.record_id, Some(1), LifecycleEvent::Deliver, "x", None),
        Err(StoreError::ConcurrentModification { .. })
    ));
    assert!(matches!(
        store.apply_event(&r.record_id, None, LifecycleEvent::MarkViewed, "x", None),
        Err(StoreError::IllegalTransition {
            from: LifecycleState::Approved,
            event: LifecycleEvent::MarkViewed
        })
    ));
    assert!(matches!(
        store.apply_event("missing", None, LifecycleEvent::Approve, "x", None),
        Err(StoreError::NotFound(_))
    ));
    assert_eq!(store.get_record(&r.record_id).unwrap().version, 2);
}

#[test]
fn audit_cannot_be_rewritten_through_the_api() {
    let store = seeded();
    let r = triaged("a", "u1", PromptVariant::Base, [9, 9, 9, 9]);
    store.put_record(&r, None).unwrap();

    let mut forged = r.transition(LifecycleEvent::Approve, "alice").unwrap();
    forged.audit[0].actor = "mallory".into();
    assert!(matches!(
        store.put_record(&forged, Some(1)),
        Err(StoreError::AuditRewrite(_))
    ));

    let mut truncated = r.clone();
    truncated.audit.pop();
    truncated.state = LifecycleState::Evaluating;
    assert!(matches!(
        store.put_record(&truncated, Some(1)),
        Err(StoreError::AuditRewrite(_))
    ));
    assert_eq!(store.list_audit(&r.record_id).unwrap(), r.audit);
}

#[test]
fn audit_rows_are_append_only_in_sql() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.db");
    let store = Store::open(&path).unwrap();
    let r = triaged("a", "u1", PromptVariant::Base, [9, 9, 9, 9]);
    store.put_record(&r, None).unwrap();
    drop(store);

    let conn = rusqlite::Connection::open(&path).unwrap();
    let upd = conn.execute("UPDATE audit SET entry_json = '{}' WHERE seq = 0", []);
    assert!(upd.unwrap_err().to_string().contains("append-only"));
    let del = conn.execute("DELETE FROM audit", []);
    assert!(del.unwrap_err().to_string().contains("append-only"));
    drop(conn);
    assert_eq!(Store::open(&path).unwrap().list_audit(&r.record_id).unwrap(), r.audit);
}

#[test]
fn state_must_match_the_audit_trail() {
    let store = seeded();
    let mut jumped = triaged("a", "u1", PromptVariant::Base, [9, 9, 9, 9]);
    jumped.state = LifecycleState::Delivered;
    assert!(matches!(
        store.put_record(&jumped, None),
        Err(StoreError::StateMismatch {
            claimed: LifecycleState::Delivered,
            replayed: LifecycleState::Triaged
        })
    ));

    let mut no_eval = FeedbackRecord::new("a:u2:base", "u2", PromptVariant::Base);
    no_eval.state = LifecycleState::Triaged;
    assert!(matches!(store.put_record(&no_eval, None), Err(StoreError::Invalid(_))));
}

#[test]
fn identity_fields_are_immutable() {
    let store = seeded();
    let r = triaged("a", "u1", PromptVariant::Base, [9, 9, 9, 9]);
    store.put_record(&r, None).unwrap();
    let mut moved = r.clone();
    moved.student_id = "u2".into();
    assert!(matches!(store.put_record(&moved, Some(1)), Err(StoreError::Invalid(_))));
}

#[test]
fn save_record_follows_a_pipeline_run_step_by_step() {
    use copilot_core::RecordSink;
    let store = seeded();
    let mut r = FeedbackRecord::new("a:u1:advanced", "u1", PromptVariant::Advanced);
    store.save(&r).unwrap();
    for e in [
        LifecycleEvent::StartGeneration,
        LifecycleEvent::TasksCompleted,
        LifecycleEvent::SynthesisCompleted,
        LifecycleEvent::EvaluationCompleted,
    ] {
        r = step(&r, e, [7, 8, 9, 10]);
        store.save(&r).unwrap();
    }
    let v = store.get_record(&r.record_id).unwrap();
    assert_eq!(v.version, 5);
    assert_eq!(v.record, r);
    // The sink still refuses an illegal jump.
    let mut bad = r.clone();
    bad.state = LifecycleState::Delivered;
    assert!(store.save(&bad).is_err());
}

fn queue_store() -> (Store, Vec<FeedbackRecord>) {
    let store = seeded();
    let (spec, students) = demo();
    let a = spec.assignment_id.as_str();
    let score_sets: [[u8; 4]; 10] = [
        [9, 9, 9, 9],
        [5, 9, 9, 9],
        [7, 8, 8, 8],
        [10, 10, 10, 10],
        [6, 6, 6, 6],
        [4, 10, 10, 10],
        [8, 8, 8, 8],
        [7, 7, 9, 9],
        [5, 5, 5, 5],
        [9, 9, 9, 9],
    ];
    let mut recs = Vec::new();
    for (s, scores) in students.iter().zip(score_sets) {
        for variant in PromptVariant::ALL {
            let r = triaged(a, &s.student_id, variant, scores);
            store.put_record(&r, None).unwrap();
            recs.push(r);
        }
    }
    // One untriaged record.
    let q = FeedbackRecord::new(
        FeedbackRecord::canonical_id(a, "u9999", PromptVariant::Base),
        "u9999",
        PromptVariant::Base,
    );
    store.put_record(&q, None).unwrap();
    recs.push(q);
    (store, recs)
}

fn rank(t: Option<TriageCategory>) -> u8 {
    match t {
        Some(TriageCategory::ReviewRequired) => 0,
        Some(TriageCategory::ReviewDesirable) => 1,
        Some(TriageCategory::ReadyToDeliver) => 2,
        None => 3,
    }
}

#[test]
fn review_queue_order_puts_red_first_then_by_mean_then_id() {
    let (store, mut recs) = queue_store();
    recs.sort_by(|a, b| {
        let ma = a.evaluation.as_ref().map(|e| e.mean_score).unwrap_or(f64::INFINITY);
        let mb = b.evaluation.as_ref().map(|e| e.mean_score).unwrap_or(f64::INFINITY);
        rank(a.triage)
            .cmp(&rank(b.triage))
            .then(ma.partial_cmp(&mb).unwrap())
            .then(a.record_id.cmp(&b.record_id))
    });
    let page = store
        .query_records(&RecordQuery {
            limit: MAX_LIMIT,
            ..Default::default()
        })
        .unwrap();
    assert_eq!(page.total, 21);
    let got: Vec<_> = page.items.iter().map(|v| v.record.record_id.clone()).collect();
    let want: Vec<_> = recs.iter().map(|r| r.record_id.clone()).collect();
    assert_eq!(got, want);
    assert_eq!(page.items[0].record.triage, Some(TriageCategory::ReviewRequired));
}

#[test]
fn descending_and_id_sorts() {
    let (store, recs) = queue_store();
    let desc = store
        .query_records(&RecordQuery {
            sort: SortOrder::MeanScoreDesc,
            limit: MAX_LIMIT,
            ..Default::default()
        })
        .unwrap();
    let means: Vec<f64> = desc
        .items
        .iter()
        .filter_map(|v| v.record.evaluation.as_ref().map(|e| e.mean_score))
        .collect();
    assert!(means.windows(2).all(|w| w[0] >= w[1]));
    assert!(desc.items.last().unwrap().record.evaluation.is_none());

    let by_id = store
        .query_records(&RecordQuery {
            sort: SortOrder::RecordId,
            limit: MAX_LIMIT,
            ..Default::default()
        })
        .unwrap();
    let mut ids: Vec<_> = recs.iter().map(|r| r.record_id.clone()).collect();
    ids.sort();
    assert_eq!(
        by_id
            .items
            .iter()
            .map(|v| v.record.record_id.clone())
            .collect::<Vec<_>>(),
        ids
    );
}

#[test]
fn filters_match_an_in_memory_oracle() {
    let (store, recs) = queue_store();
    let (spec, _) = demo();
    let levels = store.achievement_levels(&spec.assignment_id).unwrap();
    for triage in TriageCategory::ALL_WITH_NONE {
        for variant in [None, Some(PromptVariant::Base), Some(PromptVariant::Advanced)] {
            for level in [
                None,
                Some(AchievementLevel::Low),
                Some(AchievementLevel::Medium),
                Some(AchievementLevel::High),
            ] {
                let q = RecordQuery {
                    triage,
                    variant,
                    achievement: level,
                    limit: MAX_LIMIT,
                    ..Default::default()
                };
                let want = recs
                    .iter()
                    .filter(|r| triage.is_none() || r.triage == triage)
                    .filter(|r| variant.is_none() || Some(r.variant) == variant)
                    .filter(|r| level.is_none() || levels.get(&r.student_id).copied() == level)
                    .count();
                let page = store.query_records(&q).unwrap();
                assert_eq!(page.total, want, "{q:?}");
                assert_eq!(page.items.len(), want);
            }
        }
    }
    let queued = store
        .query_records(&RecordQuery {
            state: Some(LifecycleState::Queued),
            ..Default::default()
        })
        .unwrap();
    assert_eq!(queued.total, 1);
    let other = store
        .query_records(&RecordQuery {
            assignment_id: Some("other".into()),
            ..Default::default()
        })
        .unwrap();
    assert_eq!(other.total, 0);
}

trait AllWithNone: Sized {
    const ALL_WITH_NONE: [Option<Self>; 4];
}

impl AllWithNone for TriageCategory {
    const ALL_WITH_NONE: [Option<Self>; 4] = [
        None,
        Some(TriageCategory::ReviewRequired),
        Some(TriageCategory::ReviewDesirable),
        Some(TriageCategory::ReadyToDeliver),
    ];
}

#[test]
fn pages_concatenate_to_the_full_listing() {
    let (store, _) = queue_store();
    let full = store
        .query_records(&RecordQuery {
            limit: MAX_LIMIT,
            ..Default::default()
        })
        .unwrap();
    let mut pieces = Vec::new();
    let mut offset = 0;
    loop {
        let page = store
            .query_records(&RecordQuery {
                offset,
                limit: 4,
                ..Default::default()
            })
            .unwrap();
        assert_eq!(page.total, full.total);
        if page.items.is_empty() {
            break;
        }
        offset += page.items.len();
        pieces.extend(page.items);
    }
    assert_eq!(pieces, full.items);
}

#[test]
fn limit_bounds_are_enforced() {
    let store = seeded();
    for limit in [0, MAX_LIMIT + 1] {
        assert!(matches!(
            store.query_records(&RecordQuery {
                limit,
                ..Default::default()
            }),
            Err(StoreError::InvalidQuery(_))
        ));
    }
    assert!(store
        .query_records(&RecordQuery {
            limit: MAX_LIMIT,
            ..Default::default()
        })
        .is_ok());
    assert_eq!(RecordQuery::default().limit, 50);
}

#[test]
fn queried_records_carry_achievement() {
    let (store, _) = queue_store();
    let page = store
        .query_records(&RecordQuery {
            achievement: Some(AchievementLevel::High),
            ..Default::default()
        })
        .unwrap();
    assert!(page.total > 0);
    assert!(page.items.iter().all(|v| v.achievement == Some(AchievementLevel::High)));
}

#[test]
fn jobs_round_trip() {
    let store = seeded();
    let mut job = GenerationJob::new("job-1", "a", vec!["u1".into(), "u2".into()], PromptVariant::Advanced, 4);
    store.put_job(&job).unwrap();
    assert_eq!(store.get_job("job-1").unwrap(), job);
    job.status = JobStatus::Done;
    job.records.insert("a:u1:advanced".into(), LifecycleState::Triaged);
    store.put_job(&job).unwrap();
    assert_eq!(store.get_job("job-1").unwrap(), job);
    store
        .put_job(&GenerationJob::new("job-2", "b", vec![], PromptVariant::Base, 1))
        .unwrap();
    assert_eq!(store.list_jobs(None).unwrap().len(), 2);
    assert_eq!(store.list_jobs(Some("a")).unwrap(), vec![job]);
    assert!(matches!(store.get_job("nope"), Err(StoreError::NotFound(_))));
}

#[test]
fn mean_scores_survive_storage_bit_exactly() {
    let store = seeded();
    let mut r = triaged("a", "u1", PromptVariant::Base, [7, 8, 9, 9]);
    r.evaluation = Some(report([7, 8, 9, 9]));
    r.evaluation.as_mut().unwrap().mean_score = 0.1 + 0.2;
    store.put_record(&r, None).unwrap();
    let back = store.get_record(&r.record_id).unwrap().record;
    assert_eq!(back.evaluation.unwrap().mean_score.to_bits(), (0.1f64 + 0.2).to_bits());
}

#[test]
fn settings_keep_the_first_value() {
    let store = Store::open_in_memory().unwrap();
    assert_eq!(store.get_setting("k").unwrap(), None);
    assert_eq!(store.setting_or_insert("k", "first").unwrap(), "first");
    assert_eq!(store.setting_or_insert("k", "second").unwrap(), "first");
    assert_eq!(store.get_setting("k").unwrap().as_deref(), Some("first"));
}

#[test]
fn version_one_databases_are_migrated_forward() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("old.db");
    {
        let store = Store::open(&path).unwrap();
        let r = triaged("a", "u1", PromptVariant::Base, [9, 9, 9, 9]);
        store.put_record(&r, None).unwrap();
    }
    let conn = rusqlite::Connection::open(&path).unwrap();
    conn.execute_batch("DROP TABLE settings; PRAGMA user_version = 1;")
        .unwrap();
    drop(conn);
    let store = Store::open(&path).unwrap();
    assert_eq!(store.schema_version().unwrap(), SCHEMA_VERSION);
    assert_eq!(store.setting_or_insert("k", "v").unwrap(), "v");
    assert!(store.get_record("a:u1:base").is_ok());
}
