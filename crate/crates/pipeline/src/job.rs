use std::collections::BTreeMap;

use copilot_core::{LifecycleState, PromptVariant};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    PartialFailure,
}

impl JobStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Pending => "pending",
            JobStatus::Running => "running",
            JobStatus::Done => "done",
            JobStatus::PartialFailure => "partial_failure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            JobStatus::Pending,
            JobStatus::Running,
            JobStatus::Done,
            JobStatus::PartialFailure,
        ]
        .into_iter()
        .find(|j| j.as_str() == s)
    }
}

/// A batch of students to generate feedback for in one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub job_id: String,
    pub assignment_id: String,
    pub student_ids: Vec<String>,
    pub variant: PromptVariant,
    pub parallelism: usize,
    pub status: JobStatus,
    /// record_id → state reached.
    #[serde(default)]
    pub records: BTreeMap<String, LifecycleState>,
}

impl GenerationJob {
    pub fn new(
        job_id: impl Into<String>,
        assignment_id: impl Into<String>,
        student_ids: Vec<String>,
        variant: PromptVariant,
        parallelism: usize,
    ) -> Self {
        GenerationJob {
            job_id: job_id.into(),
            assignment_id: assignment_id.into(),
            student_ids,
            variant,
            parallelism,
            status: JobStatus::Pending,
            records: BTreeMap::new(),
        }
    }

    /// Status implied by a finished batch: Done iff every record is Triaged.
    pub fn settle(&mut self) {
        self.status = if self.records.values().all(|&s| s == LifecycleState::Triaged) {
            JobStatus::Done
        } else {
            JobStatus::PartialFailure
        };
    }

    pub fn counts(&self) -> BTreeMap<LifecycleState, usize> {
        let mut out = BTreeMap::new();
        for &s in self.records.values() {
            *out.entry(s).or_insert(0) += 1;
        }
        out
    }
}
