//! Per-student feedback generation: one call per task, a synthesis call and
//! an evaluation call, plus bounded-parallel batches over a cohort.

mod job;
mod pipeline;

pub use job::{GenerationJob, JobStatus};
pub use pipeline::{Pipeline, PipelineError, PipelineOptions, PIPELINE_ACTOR};
