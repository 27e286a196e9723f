//! Prompt rendering for the three pipeline stages.
//!
//! System prompts come from plain-text templates with `{{placeholder}}`
//! slots. Substitution is a single pass over the template, so text injected
//! from assignment content is never re-scanned for placeholders.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AssignmentSpec, PromptVariant, TaskResponse, TaskSpec};

pub const BASE_TASK: &str = "base_task.txt";
pub const BASE_SYNTHESIS: &str = "base_synthesis.txt";
pub const ADVANCED_TASK: &str = "advanced_task.txt";
pub const ADVANCED_SYNTHESIS: &str = "advanced_synthesis.txt";
pub const EVALUATION: &str = "evaluation.txt";
pub const HIGHLIGHT: &str = "highlight.txt";

pub const ASSIGNMENT_CONTEXT_OPEN: &str = "<assignment context>";
pub const ASSIGNMENT_CONTEXT_CLOSE: &str = "</assignment context>";
pub const FEEDBACK_CRITERIA_OPEN: &str = "<feedback criteria>";
pub const FEEDBACK_CRITERIA_CLOSE: &str = "</feedback criteria>";

/// Phrases used to recognise a stage from its system prompt.
const EVALUATION_MARKER: &str = "feedback expert";
const HIGHLIGHT_MARKER: &str = "locate the exact passages";
const SYNTHESIS_MARKER: &str = "synthesise the task-wise feedback";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStage {
    TaskFeedback,
    Synthesis,
    Evaluation,
    Highlight,
}

impl PromptStage {
    /// Recovers the stage from a rendered system prompt.
    pub fn infer(system_text: &str) -> PromptStage {
        if system_text.contains(EVALUATION_MARKER) {
            PromptStage::Evaluation
        } else if system_text.contains(HIGHLIGHT_MARKER) {
            PromptStage::Highlight
        } else if system_text.contains(SYNTHESIS_MARKER) {
            PromptStage::Synthesis
        } else {
            PromptStage::TaskFeedback
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptStage::TaskFeedback => "task_feedback",
            PromptStage::Synthesis => "synthesis",
            PromptStage::Evaluation => "evaluation",
            PromptStage::Highlight => "highlight",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub stage: PromptStage,
    /// `None` for the evaluation and highlight stages, which have one template.
    pub variant: Option<PromptVariant>,
    pub system_text: String,
    pub user_text: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template field missing: {0}")]
    TemplateFieldMissing(String),
    #[error("expected {expected} task feedbacks, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("feedback text is empty")]
    EmptyFeedback,
    #[error("response is for task {response} but task is {task}")]
    TaskMismatch { task: String, response: String },
}

#[derive(Debug, Error)]
pub enum TemplateLoadError {
    #[error("template {name}: {source}")]
    Io {
        name: &'static str,
        #[source]
        source: io::Error,
    },
}

/// The five system-prompt templates, plus the optional highlight template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub base_task: String,
    pub base_synthesis: String,
    pub advanced_task: String,
    pub advanced_synthesis: String,
    pub evaluation: String,
    pub highlight: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        TemplateSet {
            base_task: include_str!("../templates/base_task.txt").to_owned(),
            base_synthesis: include_str!("../templates/base_synthesis.txt").to_owned(),
            advanced_task: include_str!("../templates/advanced_task.txt").to_owned(),
            advanced_synthesis: include_str!("../templates/advanced_synthesis.txt").to_owned(),
            evaluation: include_str!("../templates/evaluation.txt").to_owned(),
            highlight: include_str!("../templates/highlight.txt").to_owned(),
        }
    }

    /// Loads templates from a directory. `highlight.txt` is optional and
    /// falls back to the built-in copy.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateLoadError> {
        let dir = dir.as_ref();
        let read = |name: &'static str| {
            std::fs::read_to_string(dir.join(name)).map_err(|source| TemplateLoadError::Io { name, source })
        };
        let highlight = match std::fs::read_to_string(dir.join(HIGHLIGHT)) {
            Ok(s) => s,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Self::builtin().highlight,
            Err(source) => {
                return Err(TemplateLoadError::Io {
                    name: HIGHLIGHT,
                    source,
                })
            }
        };
        Ok(TemplateSet {
            base_task: read(BASE_TASK)?,
            base_synthesis: read(BASE_SYNTHESIS)?,
            advanced_task: read(ADVANCED_TASK)?,
            advanced_synthesis: read(ADVANCED_SYNTHESIS)?,
            evaluation: read(EVALUATION)?,
            highlight,
        })
    }

    fn task(&self, variant: PromptVariant) -> &str {
        match variant {
            PromptVariant::Base => &self.base_task,
            PromptVariant::Advanced => &self.advanced_task,
        }
    }

    fn synthesis(&self, variant: PromptVariant) -> &str {
        match variant {
            PromptVariant::Base => &self.base_synthesis,
            PromptVariant::Advanced => &self.advanced_synthesis,
        }
    }

    pub fn render_task_feedback_prompt(
        &self,
        variant: PromptVariant,
        assignment: &AssignmentSpec,
        task: &TaskSpec,
        response: &TaskResponse,
    ) -> Result<RenderedPrompt, PromptError> {
        if response.task_id != task.task_id {
            return Err(PromptError::TaskMismatch {
                task: task.task_id.clone(),
                response: response.task_id.clone(),
            });
        }
        let system_text = fill(self.task(variant), &assignment_fields(assignment))?;
        require("question_text", &task.question_text)?;
        require("sample_solution", &task.sample_solution)?;
        Ok(RenderedPrompt {
            stage: PromptStage::TaskFeedback,
            variant: Some(variant),
            system_text,
            user_text: task_user_text(task, response),
        })
    }

    pub fn render_synthesis_prompt<S: AsRef<str>>(
        &self,
        variant: PromptVariant,
        assignment: &AssignmentSpec,
        task_feedbacks: &[S],
    ) -> Result<RenderedPrompt, PromptError> {
        if task_feedbacks.len() != assignment.tasks.len() {
            return Err(PromptError::ArityMismatch {
                expected: assignment.tasks.len(),
                got: task_feedbacks.len(),
            });
        }
        let system_text = fill(self.synthesis(variant), &assignment_fields(assignment))?;
        let mut user_text = String::new();
        for (i, feedback) in task_feedbacks.iter().enumerate() {
            let feedback = feedback.as_ref();
            require(&format!("task_feedbacks[{i}]"), feedback)?;
            if i > 0 {
                user_text.push_str("\n\n");
            }
            let _ = write!(user_text, "Task {}:\n{}", i + 1, feedback.trim_end());
        }
        Ok(RenderedPrompt {
            stage: PromptStage::Synthesis,
            variant: Some(variant),
            system_text,
            user_text,
        })
    }

    pub fn render_evaluation_prompt(&self, feedback_text: &str) -> Result<RenderedPrompt, PromptError> {
        if feedback_text.is_empty() {
            return Err(PromptError::EmptyFeedback);
        }
        Ok(RenderedPrompt {
            stage: PromptStage::Evaluation,
            variant: None,
            system_text: self.evaluation.clone(),
            user_text: feedback_text.to_owned(),
        })
    }

    pub fn render_highlight_prompt(&self, feedback_text: &str) -> Result<RenderedPrompt, PromptError> {
        if feedback_text.is_empty() {
            return Err(PromptError::EmptyFeedback);
        }
        Ok(RenderedPrompt {
            stage: PromptStage::Highlight,
            variant: None,
            system_text: self.highlight.clone(),
            user_text: feedback_text.to_owned(),
        })
    }
}

/// Renders with the built-in templates.
pub fn render_task_feedback_prompt(
    variant: PromptVariant,
    assignment: &AssignmentSpec,
    task: &TaskSpec,
    response: &TaskResponse,
) -> Result<RenderedPrompt, PromptError> {
    TemplateSet::builtin().render_task_feedback_prompt(variant, assignment, task, response)
}

pub fn render_synthesis_prompt<S: AsRef<str>>(
    variant: PromptVariant,
    assignment: &AssignmentSpec,
    task_feedbacks: &[S],
) -> Result<RenderedPrompt, PromptError> {
    TemplateSet::builtin().render_synthesis_prompt(variant, assignment, task_feedbacks)
}

pub fn render_evaluation_prompt(feedback_text: &str) -> Result<RenderedPrompt, PromptError> {
    TemplateSet::builtin().render_evaluation_prompt(feedback_text)
}

fn require(name: &str, value: &str) -> Result<(), PromptError> {
    if value.trim().is_empty() {
        Err(PromptError::TemplateFieldMissing(name.to_owned()))
    } else {
        Ok(())
    }
}

fn assignment_fields(assignment: &AssignmentSpec) -> Vec<(&'static str, String)> {
    vec![
        ("context_text", assignment.context_text.trim_end().to_owned()),
        ("n_tasks", assignment.tasks.len().to_string()),
    ]
}

/// Single-pass `{{name}}` substitution. Every placeholder must have a
/// non-empty value.
fn fill(template: &str, fields: &[(&str, String)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let Some(close) = after.find("}}") else {
            out.push_str(&rest[open..]);
            return Ok(out);
        };
        let name = after[..close].trim();
        let value = fields
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| PromptError::TemplateFieldMissing(name.to_owned()))?;
        require(name, value)?;
        out.push_str(value);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

fn task_user_text(task: &TaskSpec, response: &TaskResponse) -> String {
    let mut s = String::new();
    let answer = if response.answer_text.trim().is_empty() {
        "(no response submitted)"
    } else {
        response.answer_text.trim_end()
    };
    let _ = writeln!(s, "Task:\n{}\n", task.question_text.trim_end());
    let _ = writeln!(s, "Sample Solution:\n{}\n", task.sample_solution.trim_end());
    let _ = writeln!(s, "Student Response:\n{answer}\n");
    let _ = writeln!(s, "Grade:\n{} out of {}\n", response.points_awarded, task.max_points);
    s.push_str("Rubric:");
    if task.rubric.is_empty() {
        s.push_str("\n(no rubric items)");
    }
    for item in &task.rubric {
        let applied = if response.applied_rubric_item_ids.contains(&item.item_id) {
            "applied"
        } else {
            "not applied"
        };
        let _ = write!(
            s,
            "\n- [{}] ({:+}) {} ({applied})",
            item.item_id, item.point_delta, item.description
        );
    }
    s
}

/// Rubric item ids listed in a task-stage user prompt.
pub fn rubric_ids_in(user_text: &str) -> Vec<String> {
    let Some(start) = user_text.rfind("Rubric:") else {
        return Vec::new();
    };
    user_text[start..]
        .lines()
        .filter_map(|line| {
            let rest = line.strip_prefix("- [")?;
            let end = rest.find(']')?;
            Some(rest[..end].to_owned())
        })
        .collect()
}
