use std::collections::BTreeMap;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};

use copilot_client::{CaptureLog, ChatBackend, ClientStats, HttpBackend, MockBackend, ModelClient, OutboundGate};
use copilot_core::analytics::report::{
    self as analytics, CompareReport, Factor, Observation, Rq1Report, Rq2Report, Rq3Report,
};
use copilot_core::evaluation::{relocate, triage};
use copilot_core::ingest::{parse_bundle, validate_bundle, AssignmentBundle};
use copilot_core::privacy::{build_pseudonym_map, PseudonymMap};
use copilot_core::{FeedbackRecord, LifecycleEvent, LifecycleState, PromptVariant, RecordSink, TriageCategory};
use copilot_pipeline::{GenerationJob, JobStatus, Pipeline, PipelineOptions};
use copilot_store::{RecordQuery, Store, VersionedRecord, MAX_LIMIT};
use sha2::{Digest, Sha256};

use crate::config::AppConfig;
use crate::error::AppError;
use crate::views::{
    assignment_of, Delivery, DeliveryFailure, DeliveryReport, ExportRow, FeedbackDetail, IngestSummary,
    JobRecordStatus, JobView, QueuePage, RecordSummary, ScoreView, SpanView, StudentView, TaskContext, TriageSummary,
};

pub type Result<T, E = AppError> = std::result::Result<T, E>;

const CAPABILITY_SETTING: &str = "capability_secret";

/// Operations behind every CLI subcommand and HTTP route.
pub struct Service {
    store: Arc<Store>,
    config: AppConfig,
    backend: OnceLock<Arc<dyn ChatBackend>>,
    capture: Option<Arc<CaptureLog>>,
    stats: Mutex<ClientStats>,
    capability_secret: String,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Service {
    /// Opens the configured database.
    pub fn open(config: AppConfig) -> Result<Self> {
        let store = Store::open(&config.database)?;
        Self::new(Arc::new(store), config)
    }

    /// The model backend is built on first use: the mock when
    /// `config.mock`, otherwise the HTTP provider.
    pub fn new(store: Arc<Store>, config: AppConfig) -> Result<Self> {
        config.validate()?;
        let capability_secret = match &config.server.capability_secret {
            Some(s) => s.clone(),
            None => store.setting_or_insert(CAPABILITY_SETTING, &hex::encode(rand::random::<[u8; 32]>()))?,
        };
        Ok(Service {
            store,
            config,
            backend: OnceLock::new(),
            capture: None,
            stats: Mutex::new(ClientStats::default()),
            capability_secret,
        })
    }

    pub fn with_backend(self, backend: Arc<dyn ChatBackend>) -> Self {
        let _ = self.backend.set(backend);
        self
    }

    /// Records every request that passes the privacy gate.
    pub fn with_capture(mut self, log: Arc<CaptureLog>) -> Self {
        self.capture = Some(log);
        self
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn config(&self) -> &AppConfig {
        &self.config
    }

    /// Model traffic of every job this service ran.
    pub fn model_stats(&self) -> ClientStats {
        *self.stats.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn backend(&self) -> Result<Arc<dyn ChatBackend>> {
        if let Some(b) = self.backend.get() {
            return Ok(b.clone());
        }
        let built: Arc<dyn ChatBackend> = if self.config.mock {
            Arc::new(MockBackend::new(self.config.seed))
        } else {
            Arc::new(HttpBackend::new(&self.config.model).map_err(|e| AppError::Provider(e.to_string()))?)
        };
        Ok(self.backend.get_or_init(|| built).clone())
    }

    /// The only assignment in the store when `id` is omitted.
    pub fn resolve_assignment(&self, id: Option<&str>) -> Result<String> {
        if let Some(id) = id {
            self.store.get_assignment(id)?;
            return Ok(id.to_owned());
        }
        let all = self.store.list_assignments()?;
        match all.as_slice() {
            [one] => Ok(one.clone()),
            [] => Err(AppError::NotFound("no assignment has been ingested".into())),
            _ => Err(AppError::Config(format!(
                "several assignments are stored ({}); choose one with --assignment",
                all.join(", ")
            ))),
        }
    }

    // ---- ingest --------------------------------------------------------------

    pub fn ingest(&self, bundle: &AssignmentBundle) -> Result<IngestSummary> {
        let findings = validate_bundle(bundle);
        if !findings.is_empty() {
            return Err(AppError::InvalidBundle(findings));
        }
        let (spec, students) = parse_bundle(bundle).map_err(|e| AppError::Invalid(e.to_string()))?;
        let map = build_pseudonym_map(&students, self.config.seed).map_err(|e| AppError::Invalid(e.to_string()))?;
        self.store.put_assignment(&spec, &students)?;
        self.store.put_pseudonym_map(&spec.assignment_id, &map)?;
        Ok(IngestSummary {
            assignment_id: spec.assignment_id.clone(),
            title: spec.title.clone(),
            tasks: spec.tasks.len(),
            students: students.len(),
        })
    }

    // ---- generation ----------------------------------------------------------

    /// Queues one record per student (all students when `only` is `None`)
    /// and stores a pending job. Students whose record has already left
    /// `Queued` are skipped; regenerate those instead.
    pub fn create_job(
        &self,
        assignment_id: &str,
        variant: PromptVariant,
        parallelism: usize,
        only: Option<&[String]>,
    ) -> Result<GenerationJob> {
        if parallelism == 0 {
            return Err(AppError::Invalid("parallelism must be at least 1".into()));
        }
        self.store.get_assignment(assignment_id)?;
        let students = self.store.get_students(assignment_id)?;
        let selected: Vec<String> = match only {
            None => students.iter().map(|s| s.student_id.clone()).collect(),
            Some(ids) => {
                for id in ids {
                    if !students.iter().any(|s| &s.student_id == id) {
                        return Err(AppError::Invalid(format!("unknown student {id}")));
                    }
                }
                ids.to_vec()
            }
        };
        let mut job = GenerationJob::new(
            format!("job-{:016x}", rand::random::<u64>()),
            assignment_id,
            Vec::new(),
            variant,
            parallelism,
        );
        for sid in selected {
            let rid = FeedbackRecord::canonical_id(assignment_id, &sid, variant);
            let state = match self.store.get_record(&rid) {
                Ok(v) => v.record.state,
                Err(copilot_store::StoreError::NotFound(_)) => {
                    self.store
                        .put_record(&FeedbackRecord::new(rid.clone(), sid.clone(), variant), None)?;
                    LifecycleState::Queued
                }
                Err(e) => return Err(e.into()),
            };
            if state == LifecycleState::Queued {
                job.student_ids.push(sid);
                job.records.insert(rid, state);
            } else {
                tracing::info!(record = %rid, %state, "skipping record that is not queued");
            }
        }
        self.store.put_job(&job)?;
        Ok(job)
    }

    /// Runs a stored job to completion. Progress is visible in the store
    /// while it runs.
    pub async fn run_job(&self, job_id: &str) -> Result<GenerationJob> {
        let mut job = self.store.get_job(job_id)?;
        let assignment = self.store.get_assignment(&job.assignment_id)?;
        let students = self.store.get_students(&job.assignment_id)?;
        let map = Arc::new(self.store.get_pseudonym_map(&job.assignment_id)?);

        let mut queued = BTreeMap::new();
        let mut runnable = Vec::new();
        for sid in &job.student_ids {
            let rid = FeedbackRecord::canonical_id(&job.assignment_id, sid, job.variant);
            let v = self.store.get_record(&rid)?;
            if v.record.state == LifecycleState::Queued {
                queued.insert(sid.clone(), v.record);
                runnable.push(sid.clone());
            } else {
                job.records.insert(rid, v.record.state);
            }
        }
        job.student_ids = runnable;

        let mut client =
            ModelClient::new(self.backend()?, self.config.model.clone()).with_gate(OutboundGate::new(map.clone()));
        if let Some(log) = &self.capture {
            client = client.with_capture(log.clone());
        }
        let client = Arc::new(client);
        let pipeline = Pipeline::new(client.clone(), map)
            .with_options(PipelineOptions {
                parallel_tasks: true,
                llm_highlighting: self.config.llm_highlighting,
                triage: self.config.triage,
            })
            .with_sink(self.store.clone() as Arc<dyn RecordSink>);

        job.status = JobStatus::Running;
        self.store.put_job(&job)?;
        let outcome = pipeline
            .run_batch_from(job.clone(), &assignment, &students, queued)
            .await;
        {
            let s = client.stats();
            let mut total = self.stats.lock().unwrap_or_else(|e| e.into_inner());
            total.completed += s.completed;
            total.transmissions += s.transmissions;
            total.blocked += s.blocked;
        }
        match outcome {
            Ok(done) => {
                self.store.put_job(&done)?;
                Ok(done)
            }
            Err(e) => {
                job.status = JobStatus::PartialFailure;
                self.store.put_job(&job)?;
                Err(e.into())
            }
        }
    }

    /// Creates and runs a job for every queued student.
    pub async fn generate(&self, assignment_id: &str, variant: PromptVariant, parallelism: usize) -> Result<JobView> {
        let job = self.create_job(assignment_id, variant, parallelism, None)?;
        self.run_job(&job.job_id).await?;
        self.job_view(&job.job_id)
    }

    pub fn job_view(&self, job_id: &str) -> Result<JobView> {
        let job = self.store.get_job(job_id)?;
        let mut counts = BTreeMap::new();
        let mut records = Vec::with_capacity(job.records.len());
        for rid in job.records.keys() {
            let v = self.store.get_record(rid)?;
            *counts.entry(v.record.state).or_insert(0) += 1;
            records.push(JobRecordStatus {
                record_id: rid.clone(),
                student_id: v.record.student_id.clone(),
                state: v.record.state,
                triage: v.record.triage,
            });
        }
        Ok(JobView { job, counts, records })
    }

    pub fn list_jobs(&self, assignment_id: Option<&str>) -> Result<Vec<GenerationJob>> {
        Ok(self.store.list_jobs(assignment_id)?)
    }

    // ---- review --------------------------------------------------------------

    pub fn queue(&self, q: &RecordQuery) -> Result<QueuePage> {
        let page = self.store.query_records(q)?;
        Ok(QueuePage {
            total: page.total,
            offset: page.offset,
            limit: page.limit,
            items: page.items.iter().map(RecordSummary::from).collect(),
        })
    }

    /// Triaged records awaiting review in one traffic-light category,
    /// lowest mean score first.
    pub fn review_queue(&self, assignment_id: Option<&str>, category: TriageCategory) -> Result<Vec<RecordSummary>> {
        let q = RecordQuery {
            assignment_id: assignment_id.map(str::to_owned),
            state: Some(LifecycleState::Triaged),
            triage: Some(category),
            limit: MAX_LIMIT,
            ..Default::default()
        };
        let mut out = Vec::new();
        let mut offset = 0;
        loop {
            let page = self.queue(&RecordQuery { offset, ..q.clone() })?;
            let n = page.items.len();
            out.extend(page.items);
            offset += n;
            if n == 0 || offset >= page.total {
                return Ok(out);
            }
        }
    }

    pub fn detail(&self, record_id: &str) -> Result<FeedbackDetail> {
        let v = self.store.get_record(record_id)?;
        self.detail_of(v)
    }

    fn detail_of(&self, v: VersionedRecord) -> Result<FeedbackDetail> {
        let r = &v.record;
        let assignment_id = assignment_of(r).to_owned();
        let spec = self.store.get_assignment(&assignment_id).ok();
        let student = self
            .store
            .get_students(&assignment_id)
            .ok()
            .and_then(|all| all.into_iter().find(|s| s.student_id == r.student_id));
        let feedback_text = r.effective_feedback_text().unwrap_or_default().to_owned();
        let scores = match &r.evaluation {
            Some(e) => e
                .scores
                .iter()
                .map(|s| {
                    let span = e
                        .spans
                        .iter()
                        .find(|sp| sp.criterion == s.criterion)
                        .map(|sp| SpanView::new(&feedback_text, sp))
                        .unwrap_or_else(|| {
                            SpanView::new(&feedback_text, &copilot_core::HighlightSpan::unresolved(s.criterion))
                        });
                    ScoreView {
                        criterion: s.criterion,
                        score: s.score,
                        justification: s.justification.clone(),
                        span,
                    }
                })
                .collect(),
            None => Vec::new(),
        };
        let tasks = spec
            .iter()
            .flat_map(|spec| spec.tasks.iter())
            .map(|t| TaskContext {
                task_id: t.task_id.clone(),
                question_text: t.question_text.clone(),
                sample_solution: t.sample_solution.clone(),
                max_points: t.max_points,
                rubric: t.rubric.clone(),
                response: student.as_ref().and_then(|s| s.response(&t.task_id)).cloned(),
                task_feedback: r.task_feedbacks.get(&t.task_id).cloned(),
            })
            .collect();
        Ok(FeedbackDetail {
            record_id: r.record_id.clone(),
            assignment_id,
            student_id: r.student_id.clone(),
            student_name: student.map(|s| s.display_name),
            variant: r.variant,
            state: r.state,
            version: v.version,
            achievement: v.achievement,
            triage: r.triage,
            colour: r.triage.map(|t| t.colour().to_owned()),
            edited: r.edited_feedback.as_deref().is_some_and(|t| !t.is_empty()),
            generated_text: r.assignment_feedback.clone(),
            feedback_text,
            mean_score: r.evaluation.as_ref().map(|e| e.mean_score),
            scores,
            tasks,
            audit: r.audit.clone(),
        })
    }

    /// Stores an instructor edit, re-locates the justification quotes in
    /// the new text and re-applies triage. Only triaged records are editable.
    pub fn edit_text(&self, record_id: &str, expected_version: Option<u64>, text: &str) -> Result<FeedbackDetail> {
        if text.trim().is_empty() {
            return Err(AppError::Invalid("edited_text must not be empty".into()));
        }
        let v = self.store.get_record(record_id)?;
        let expected = expected_version.unwrap_or(v.version);
        if v.record.state != LifecycleState::Triaged {
            return Err(AppError::NotEditable {
                record_id: record_id.to_owned(),
                state: v.record.state,
            });
        }
        let mut r = v.record.clone();
        let report = r
            .evaluation
            .as_ref()
            .ok_or_else(|| AppError::Internal(format!("triaged record {record_id} has no evaluation")))?;
        let report = relocate(report, text);
        r.triage = Some(triage(&report, &self.config.triage).map_err(|e| AppError::Config(e.to_string()))?);
        r.evaluation = Some(report);
        r.edited_feedback = Some(text.to_owned());
        let version = self.store.put_record(&r, Some(expected))?;
        self.detail_of(VersionedRecord {
            version,
            achievement: v.achievement,
            record: r,
        })
    }

    pub fn approve(&self, record_id: &str, expected_version: Option<u64>, actor: &str) -> Result<RecordSummary> {
        let v = self
            .store
            .apply_event(record_id, expected_version, LifecycleEvent::Approve, actor, None)?;
        Ok(RecordSummary::from(&v))
    }

    /// Sends a record back to `Queued` and prepares a one-student job for it.
    pub fn regenerate(
        &self,
        record_id: &str,
        expected_version: Option<u64>,
        actor: &str,
        note: Option<String>,
    ) -> Result<(RecordSummary, GenerationJob)> {
        let v = self
            .store
            .apply_event(record_id, expected_version, LifecycleEvent::Regenerate, actor, note)?;
        let assignment_id = assignment_of(&v.record).to_owned();
        let job = self.create_job(
            &assignment_id,
            v.record.variant,
            1,
            Some(std::slice::from_ref(&v.record.student_id)),
        )?;
        Ok((RecordSummary::from(&v), job))
    }

    /// Re-applies the configured thresholds to every triaged record.
    pub fn retriage(&self, assignment_id: Option<&str>) -> Result<TriageSummary> {
        self.config
            .triage
            .validate()
            .map_err(|e| AppError::Config(e.to_string()))?;
        let mut changed = Vec::new();
        for v in self.store.all_records(assignment_id)? {
            if v.record.state != LifecycleState::Triaged {
                continue;
            }
            let Some(report) = &v.record.evaluation else { continue };
            let category = triage(report, &self.config.triage).map_err(|e| AppError::Config(e.to_string()))?;
            if v.record.triage != Some(category) {
                let mut r = v.record.clone();
                r.triage = Some(category);
                self.store.put_record(&r, Some(v.version))?;
                changed.push(r.record_id);
            }
        }
        let mut summary = self.triage_summary(assignment_id)?;
        summary.changed = changed;
        Ok(summary)
    }

    pub fn triage_summary(&self, assignment_id: Option<&str>) -> Result<TriageSummary> {
        let mut counts: BTreeMap<String, usize> = ["red", "amber", "green"]
            .into_iter()
            .map(|c| (c.to_owned(), 0))
            .collect();
        for v in self.store.all_records(assignment_id)? {
            if let (LifecycleState::Triaged, Some(t)) = (v.record.state, v.record.triage) {
                *counts.entry(t.colour().to_owned()).or_insert(0) += 1;
            }
        }
        Ok(TriageSummary {
            thresholds: self.config.triage,
            counts,
            changed: Vec::new(),
        })
    }

    // ---- delivery and student events -----------------------------------------

    /// Capability token granting one student's viewed/flag actions on one record.
    pub fn capability_for(&self, record_id: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.capability_secret.as_bytes());
        h.update([0u8]);
        h.update(record_id.as_bytes());
        hex::encode(&h.finalize()[..16])
    }

    fn check_capability(&self, record_id: &str, token: &str) -> Result<()> {
        let want = self.capability_for(record_id);
        let same =
            want.len() == token.len() && want.bytes().zip(token.bytes()).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0;
        if same {
            Ok(())
        } else {
            Err(AppError::Forbidden(record_id.to_owned()))
        }
    }

    /// Moves each approved record to `Delivered`. Records that cannot be
    /// delivered are reported individually.
    pub fn deliver(&self, record_ids: &[String], actor: &str) -> Result<DeliveryReport> {
        let mut report = DeliveryReport::default();
        let mut rosters: BTreeMap<String, Vec<copilot_core::StudentRecord>> = BTreeMap::new();
        for rid in record_ids {
            match self.store.apply_event(rid, None, LifecycleEvent::Deliver, actor, None) {
                Ok(v) => {
                    let aid = assignment_of(&v.record).to_owned();
                    if !rosters.contains_key(&aid) {
                        rosters.insert(aid.clone(), self.store.get_students(&aid)?);
                    }
                    let student = rosters[&aid].iter().find(|s| s.student_id == v.record.student_id);
                    report.delivered.push(Delivery {
                        record_id: rid.clone(),
                        student_id: v.record.student_id.clone(),
                        display_name: student.map(|s| s.display_name.clone()),
                        email: student.and_then(|s| s.email.clone()),
                        feedback_text: v.record.effective_feedback_text().unwrap_or_default().to_owned(),
                        capability: self.capability_for(rid),
                    });
                }
                Err(e) => {
                    let e = AppError::from(e);
                    report.failed.push(DeliveryFailure {
                        record_id: rid.clone(),
                        code: e.code().to_owned(),
                        message: e.to_string(),
                    });
                }
            }
        }
        Ok(report)
    }

    pub fn deliver_all_approved(&self, assignment_id: Option<&str>, actor: &str) -> Result<DeliveryReport> {
        let ids: Vec<String> = self
            .store
            .all_records(assignment_id)?
            .into_iter()
            .filter(|v| v.record.state == LifecycleState::Approved)
            .map(|v| v.record.record_id)
            .collect();
        self.deliver(&ids, actor)
    }

    fn student_actor(&self, record: &FeedbackRecord) -> String {
        self.store
            .get_pseudonym_map(assignment_of(record))
            .ok()
            .and_then(|m: PseudonymMap| m.token_for(&record.student_id).map(|t| format!("student:{t}")))
            .unwrap_or_else(|| "student".to_owned())
    }

    fn student_event(
        &self,
        record_id: &str,
        capability: &str,
        event: LifecycleEvent,
        note: Option<String>,
    ) -> Result<StudentView> {
        self.check_capability(record_id, capability)?;
        let current = self.store.get_record(record_id)?;
        let actor = self.student_actor(&current.record);
        let v = self
            .store
            .apply_event(record_id, Some(current.version), event, &actor, note)?;
        Ok(StudentView {
            record_id: v.record.record_id,
            state: v.record.state,
        })
    }

    pub fn mark_viewed(&self, record_id: &str, capability: &str) -> Result<StudentView> {
        self.student_event(record_id, capability, LifecycleEvent::MarkViewed, None)
    }

    pub fn flag(&self, record_id: &str, capability: &str, comment: Option<String>) -> Result<StudentView> {
        self.student_event(record_id, capability, LifecycleEvent::Flag, comment)
    }

    // ---- analytics and export ------------------------------------------------

    /// One observation per evaluated record.
    pub fn observations(&self, assignment_id: Option<&str>) -> Result<Vec<Observation>> {
        Ok(self
            .store
            .all_records(assignment_id)?
            .iter()
            .filter_map(|v| Observation::from_record(&v.record, v.achievement))
            .collect())
    }

    pub fn compare(&self, assignment_id: Option<&str>, factor: Factor) -> Result<CompareReport> {
        Ok(analytics::compare(&self.observations(assignment_id)?, factor)?)
    }

    pub fn rq1(&self, assignment_id: Option<&str>) -> Result<Rq1Report> {
        Ok(analytics::rq1(&self.observations(assignment_id)?)?)
    }

    pub fn rq2(&self, assignment_id: Option<&str>) -> Result<Rq2Report> {
        Ok(analytics::rq2(&self.observations(assignment_id)?)?)
    }

    pub fn rq3(&self, assignment_id: Option<&str>) -> Result<Rq3Report> {
        Ok(analytics::rq3(&self.observations(assignment_id)?)?)
    }

    pub fn export_rows(&self, assignment_id: Option<&str>) -> Result<Vec<ExportRow>> {
        Ok(self
            .store
            .all_records(assignment_id)?
            .iter()
            .map(ExportRow::from)
            .collect())
    }

    pub fn export_json<W: Write>(&self, assignment_id: Option<&str>, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.export_rows(assignment_id)?)
            .map_err(|e| AppError::Internal(e.to_string()))
    }

    pub fn export_csv<W: Write>(&self, assignment_id: Option<&str>, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.export_rows(assignment_id)? {
            w.serialize(row).map_err(|e| AppError::Internal(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}
