use std::collections::BTreeMap;
use std::sync::Arc;

use copilot_client::{ChatRequest, ClientError, ModelClient};
use copilot_core::evaluation::{
    build_report, extract_json_object, locate_quote, parse_evaluation_json, score_key, triage, TriageConfig,
};
use copilot_core::privacy::PseudonymMap;
use copilot_core::prompting::{PromptError, PromptStage, RenderedPrompt, TemplateSet};
use copilot_core::{
    AssignmentSpec, Criterion, EvaluationReport, FeedbackRecord, LifecycleEvent, LifecycleState, NullSink,
    PromptVariant, RecordSink, StudentRecord, TransitionError,
};
use futures::stream::{self, StreamExt};
use thiserror::Error;

use crate::job::{GenerationJob, JobStatus};

pub const PIPELINE_ACTOR: &str = "pipeline";

/// Problems with the inputs, as opposed to stage failures, which end in `Failed`.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("student {0} does not match the assignment: {1}")]
    InvalidStudent(String, String),
    #[error("no pseudonym for student {0}")]
    MissingPseudonym(String),
    #[error("unknown student {0}")]
    UnknownStudent(String),
    #[error("record {record} must be queued to run, found {state}")]
    NotQueued { record: String, state: LifecycleState },
    #[error("job targets assignment {job} but {given} was supplied")]
    AssignmentMismatch { job: String, given: String },
    #[error("triage configuration: {0}")]
    BadTriage(String),
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("record sink: {0}")]
    Sink(String),
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    /// Issue a student's task-feedback calls concurrently.
    pub parallel_tasks: bool,
    /// Locate highlight passages with a second model call instead of the
    /// evaluation's own justification quotes.
    pub llm_highlighting: bool,
    pub triage: TriageConfig,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            parallel_tasks: true,
            llm_highlighting: false,
            triage: TriageConfig::default(),
        }
    }
}

/// Why a stage failed; recorded in the audit note of the `Fail` event.
#[derive(Debug)]
struct StageFailure {
    stage: PromptStage,
    cause: String,
}

impl StageFailure {
    fn new(stage: PromptStage, cause: impl ToString) -> Self {
        StageFailure {
            stage,
            cause: cause.to_string(),
        }
    }

    fn note(&self) -> String {
        format!("stage={}: {}", self.stage.as_str(), self.cause)
    }
}

impl From<(PromptStage, PromptError)> for StageFailure {
    fn from((stage, e): (PromptStage, PromptError)) -> Self {
        StageFailure::new(stage, e)
    }
}

pub struct Pipeline {
    client: Arc<ModelClient>,
    map: Arc<PseudonymMap>,
    templates: Arc<TemplateSet>,
    options: PipelineOptions,
    sink: Arc<dyn RecordSink>,
}

impl Pipeline {
    pub fn new(client: Arc<ModelClient>, map: Arc<PseudonymMap>) -> Self {
        Pipeline {
            client,
            map,
            templates: Arc::new(TemplateSet::builtin()),
            options: PipelineOptions::default(),
            sink: Arc::new(NullSink),
        }
    }

    pub fn with_templates(mut self, templates: Arc<TemplateSet>) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_options(mut self, options: PipelineOptions) -> Self {
        self.options = options;
        self
    }

    /// Receives every intermediate record state.
    pub fn with_sink(mut self, sink: Arc<dyn RecordSink>) -> Self {
        self.sink = sink;
        self
    }

    pub fn client(&self) -> &ModelClient {
        &self.client
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.options
    }

    /// Generates, synthesises and evaluates one student's feedback.
    pub async fn run_student(
        &self,
        assignment: &AssignmentSpec,
        student: &StudentRecord,
        variant: PromptVariant,
    ) -> Result<FeedbackRecord, PipelineError> {
        let id = FeedbackRecord::canonical_id(&assignment.assignment_id, &student.student_id, variant);
        self.run_record(
            FeedbackRecord::new(id, student.student_id.clone(), variant),
            assignment,
            student,
        )
        .await
    }

    /// Runs a queued record (fresh or regenerated). Earlier outputs are
    /// cleared; the audit trail is kept.
    pub async fn run_record(
        &self,
        mut record: FeedbackRecord,
        assignment: &AssignmentSpec,
        student: &StudentRecord,
    ) -> Result<FeedbackRecord, PipelineError> {
        if record.state != LifecycleState::Queued {
            return Err(PipelineError::NotQueued {
                record: record.record_id,
                state: record.state,
            });
        }
        self.options
            .triage
            .validate()
            .map_err(|e| PipelineError::BadTriage(e.to_string()))?;
        student
            .validate_against(assignment)
            .map_err(|e| PipelineError::InvalidStudent(student.student_id.clone(), e.to_string()))?;
        let token = self
            .map
            .token_for(&student.student_id)
            .ok_or_else(|| PipelineError::MissingPseudonym(student.student_id.clone()))?
            .to_owned();

        record.task_feedbacks.clear();
        record.assignment_feedback.clear();
        record.edited_feedback = None;
        record.evaluation = None;
        record.triage = None;

        let record = self.step(record, LifecycleEvent::StartGeneration, None)?;
        let mut work = record.clone();
        match self.generate(&mut work, assignment, student, &token).await {
            Ok(report) => {
                let category =
                    triage(&report, &self.options.triage).map_err(|e| PipelineError::BadTriage(e.to_string()))?;
                work.evaluation = Some(report);
                work.triage = Some(category);
                self.step(work, LifecycleEvent::EvaluationCompleted, None)
            }
            Err(failure) => {
                tracing::warn!(record = %work.record_id, "{}", failure.note());
                work.evaluation = None;
                work.triage = None;
                self.step(work, LifecycleEvent::Fail, Some(failure.note()))
            }
        }
    }

    fn step(
        &self,
        record: FeedbackRecord,
        event: LifecycleEvent,
        note: Option<String>,
    ) -> Result<FeedbackRecord, PipelineError> {
        let next = record.transition_with_note(event, PIPELINE_ACTOR, note)?;
        self.sink.save(&next).map_err(PipelineError::Sink)?;
        Ok(next)
    }

    /// The three stages. `record` advances through the generation states and
    /// keeps whatever was produced if a stage fails.
    async fn generate(
        &self,
        record: &mut FeedbackRecord,
        assignment: &AssignmentSpec,
        student: &StudentRecord,
        token: &str,
    ) -> Result<EvaluationReport, StageFailure> {
        let cfg = self.client.config();
        let stage_call = |prompt: RenderedPrompt, model: &str, temperature: f64, request_id: String| {
            let req = ChatRequest::from_prompt(
                &self.pseudonymize(&prompt),
                model,
                temperature,
                cfg.max_tokens,
                request_id,
            )
            .with_user(token);
            async move {
                let resp = self.client.complete(req).await?;
                Ok::<String, ClientError>(self.map.depseudonymize_text(&resp.content))
            }
        };

        // stage 1: one call per task
        let mut prompts = Vec::with_capacity(assignment.tasks.len());
        for task in &assignment.tasks {
            let response = student
                .response(&task.task_id)
                .expect("validated against the assignment");
            let prompt = self
                .templates
                .render_task_feedback_prompt(record.variant, assignment, task, response)
                .map_err(|e| (PromptStage::TaskFeedback, e))?;
            prompts.push((task.task_id.clone(), prompt));
        }
        let calls = prompts.into_iter().map(|(task_id, prompt)| {
            let id = format!("{}/task/{task_id}", record.record_id);
            let fut = stage_call(prompt, &cfg.model, cfg.feedback_temperature, id);
            async move { (task_id, fut.await) }
        });
        let results: Vec<(String, Result<String, ClientError>)> = if self.options.parallel_tasks {
            futures::future::join_all(calls).await
        } else {
            let mut out = Vec::new();
            for call in calls {
                out.push(call.await);
            }
            out
        };
        let mut first_error = None;
        for (task_id, result) in results {
            match result {
                Ok(text) => {
                    record.task_feedbacks.insert(task_id, text);
                }
                Err(e) => {
                    first_error.get_or_insert_with(|| format!("task {task_id}: {e}"));
                }
            }
        }
        if let Some(cause) = first_error {
            return Err(StageFailure::new(PromptStage::TaskFeedback, cause));
        }
        self.advance(record, LifecycleEvent::TasksCompleted)?;

        // stage 2: synthesis over the task feedbacks, in task order
        let ordered: Vec<&str> = assignment
            .tasks
            .iter()
            .map(|t| record.task_feedbacks[&t.task_id].as_str())
            .collect();
        let prompt = self
            .templates
            .render_synthesis_prompt(record.variant, assignment, &ordered)
            .map_err(|e| (PromptStage::Synthesis, e))?;
        let id = format!("{}/synthesis", record.record_id);
        record.assignment_feedback = stage_call(prompt, &cfg.model, cfg.feedback_temperature, id)
            .await
            .map_err(|e| StageFailure::new(PromptStage::Synthesis, e))?;
        self.advance(record, LifecycleEvent::SynthesisCompleted)?;

        // stage 3: evaluation, then quote location
        let feedback = record.assignment_feedback.clone();
        let prompt = self
            .templates
            .render_evaluation_prompt(&feedback)
            .map_err(|e| (PromptStage::Evaluation, e))?;
        let id = format!("{}/evaluation", record.record_id);
        let raw = stage_call(prompt, cfg.evaluation_model(), cfg.evaluation_temperature, id)
            .await
            .map_err(|e| StageFailure::new(PromptStage::Evaluation, e))?;
        let scores = parse_evaluation_json(&raw).map_err(|e| StageFailure::new(PromptStage::Evaluation, e))?;
        let mut report = build_report(&feedback, &scores);

        if self.options.llm_highlighting {
            let prompt = self
                .templates
                .render_highlight_prompt(&feedback)
                .map_err(|e| (PromptStage::Highlight, e))?;
            let id = format!("{}/highlight", record.record_id);
            let raw = stage_call(prompt, cfg.evaluation_model(), cfg.evaluation_temperature, id)
                .await
                .map_err(|e| StageFailure::new(PromptStage::Highlight, e))?;
            let passages = parse_highlights(&raw).map_err(|e| StageFailure::new(PromptStage::Highlight, e))?;
            report.spans = Criterion::ALL
                .iter()
                .map(|&c| locate_quote(&feedback, c, &passages[c.index()]))
                .collect();
        }
        Ok(report)
    }

    fn advance(&self, record: &mut FeedbackRecord, event: LifecycleEvent) -> Result<(), StageFailure> {
        let stage = match event {
            LifecycleEvent::TasksCompleted => PromptStage::TaskFeedback,
            _ => PromptStage::Synthesis,
        };
        let next = record
            .transition(event, PIPELINE_ACTOR)
            .map_err(|e| StageFailure::new(stage, e))?;
        self.sink
            .save(&next)
            .map_err(|e| StageFailure::new(stage, format!("record sink: {e}")))?;
        *record = next;
        Ok(())
    }

    fn pseudonymize(&self, prompt: &RenderedPrompt) -> RenderedPrompt {
        RenderedPrompt {
            system_text: self.map.pseudonymize_text(&prompt.system_text),
            user_text: self.map.pseudonymize_text(&prompt.user_text),
            ..prompt.clone()
        }
    }

    /// Runs every student of `job` with at most `job.parallelism` in flight.
    pub async fn run_batch(
        &self,
        job: GenerationJob,
        assignment: &AssignmentSpec,
        students: &[StudentRecord],
    ) -> Result<GenerationJob, PipelineError> {
        self.run_batch_from(job, assignment, students, BTreeMap::new()).await
    }

    /// Like [`Pipeline::run_batch`], but students with an entry in `queued`
    /// continue that record (keeping its audit trail) instead of starting a
    /// fresh one.
    pub async fn run_batch_from(
        &self,
        mut job: GenerationJob,
        assignment: &AssignmentSpec,
        students: &[StudentRecord],
        mut queued: BTreeMap<String, FeedbackRecord>,
    ) -> Result<GenerationJob, PipelineError> {
        if job.parallelism == 0 {
            return Err(PipelineError::ZeroParallelism);
        }
        if job.assignment_id != assignment.assignment_id {
            return Err(PipelineError::AssignmentMismatch {
                job: job.assignment_id.clone(),
                given: assignment.assignment_id.clone(),
            });
        }
        let by_id: BTreeMap<&str, &StudentRecord> = students.iter().map(|s| (s.student_id.as_str(), s)).collect();
        let variant = job.variant;
        let mut work = Vec::with_capacity(job.student_ids.len());
        for id in &job.student_ids {
            let s = by_id
                .get(id.as_str())
                .ok_or_else(|| PipelineError::UnknownStudent(id.clone()))?;
            let record = queued.remove(id).unwrap_or_else(|| {
                let rid = FeedbackRecord::canonical_id(&assignment.assignment_id, id, variant);
                FeedbackRecord::new(rid, id.clone(), variant)
            });
            work.push((*s, record));
        }
        job.status = JobStatus::Running;
        // Futures are built eagerly so the returned future stays Send for spawning.
        let pending: Vec<_> = work
            .into_iter()
            .map(|(s, record)| self.run_record(record, assignment, s))
            .collect();
        let results: Vec<Result<FeedbackRecord, PipelineError>> =
            stream::iter(pending).buffer_unordered(job.parallelism).collect().await;
        for r in results {
            let record = r?;
            job.records.insert(record.record_id, record.state);
        }
        job.settle();
        Ok(job)
    }
}

/// The four passages of a highlight-stage answer, in criterion order.
fn parse_highlights(raw: &str) -> Result<[String; 4], String> {
    let json = extract_json_object(raw).ok_or("no JSON object in highlight output")?;
    let value: serde_json::Value = serde_json::from_str(json).map_err(|e| e.to_string())?;
    let mut out: [String; 4] = Default::default();
    for c in Criterion::ALL {
        out[c.index()] = value
            .get(score_key(c))
            .and_then(|v| v.as_str())
            .ok_or_else(|| format!("missing passage for {}", score_key(c)))?
            .to_owned();
    }
    Ok(out)
}
