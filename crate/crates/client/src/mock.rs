use std::sync::Mutex;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use copilot_core::evaluation::{score_key, to_evaluation_json};
use copilot_core::prompting::{rubric_ids_in, PromptStage};
use copilot_core::{Criterion, CriterionScore};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::client::ChatBackend;
use crate::error::TransportError;
use crate::request::{ChatRequest, ChatResponse};

pub const MOCK_PROVIDER: &str = "mock";

const OPENERS: [&str; 4] = [
    "You made a solid start on this task.",
    "Thank you for the effort you put into this answer.",
    "Your answer shows that you understood the main idea of the question.",
    "This response is a good basis to build on.",
];

const APPLIED: [&str; 4] = [
    "was applied, so revisit this part of your query and compare it with the expected result.",
    "cost you points here; try running the query on a small example to see where it differs.",
    "points to a gap worth fixing; break the query into smaller steps and check each one.",
    "was applied, which suggests reviewing how this clause behaves on edge cases.",
];

const NOT_APPLIED: [&str; 4] = [
    "was handled well in your answer.",
    "is satisfied, which is a good sign of careful work.",
    "did not apply to your answer, so keep doing what you did here.",
    "was met; well done on getting this part right.",
];

const CLOSERS: [&str; 4] = [
    "What would you check first if the result looked wrong?",
    "Try explaining each clause of your query in your own words.",
    "Consider how you would test this query against tricky data.",
    "Keep going, you are clearly making progress.",
];

const SUMMARY: [&str; 4] = [
    "You showed a good grasp of the core query patterns.",
    "Your strongest answers were clear and well structured.",
    "Several answers would benefit from checking boundary conditions more carefully.",
    "Reviewing how joins and filters interact would strengthen your work.",
];

const PROCESS: [&str; 3] = [
    "When a query misbehaves, test it on a tiny table first and compare the output with what you expected.",
    "Notice how the mistakes in different tasks share a cause, and make a short checklist from them.",
    "Try writing each query in two different ways and ask yourself which one is easier to verify.",
];

/// Calls that match a rule fail with `status` instead of producing content.
#[derive(Debug, Clone, Default)]
pub struct FailRule {
    pub stage: Option<PromptStage>,
    /// Exact match on the request's `user` tag.
    pub user: Option<String>,
    pub status: u16,
    /// Fail only this many matching calls, then succeed.
    pub times: Option<u32>,
}

impl FailRule {
    pub fn stage(stage: PromptStage) -> Self {
        FailRule {
            stage: Some(stage),
            status: 400,
            ..Default::default()
        }
    }

    pub fn user(token: impl Into<String>) -> Self {
        FailRule {
            user: Some(token.into()),
            status: 400,
            ..Default::default()
        }
    }

    fn matches(&self, stage: PromptStage, user: Option<&str>) -> bool {
        self.stage.is_none_or(|s| s == stage) && self.user.as_deref().is_none_or(|u| Some(u) == user)
    }
}

/// One call observed by the mock, with offsets from the backend's creation.
#[derive(Debug, Clone, Serialize)]
pub struct MockCall {
    pub request_id: String,
    pub stage: PromptStage,
    pub user: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub system_text: String,
    pub user_text: String,
    pub started: Duration,
    pub finished: Duration,
    pub failed: bool,
}

/// Deterministic in-process backend. Content depends only on the seed,
/// the stage and the request content.
#[derive(Debug)]
pub struct MockBackend {
    seed: u64,
    latency: Duration,
    rules: Mutex<Vec<FailRule>>,
    calls: Mutex<Vec<MockCall>>,
    epoch: Instant,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        MockBackend {
            seed,
            latency: Duration::ZERO,
            rules: Mutex::new(Vec::new()),
            calls: Mutex::new(Vec::new()),
            epoch: Instant::now(),
        }
    }

    /// Simulated per-call latency.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_failure(self, rule: FailRule) -> Self {
        self.rules.lock().expect("rules poisoned").push(rule);
        self
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.calls.lock().expect("call log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("call log poisoned").len()
    }

    pub fn count_stage(&self, stage: PromptStage) -> usize {
        self.calls
            .lock()
            .expect("call log poisoned")
            .iter()
            .filter(|c| c.stage == stage)
            .count()
    }

    fn should_fail(&self, stage: PromptStage, user: Option<&str>) -> Option<u16> {
        let mut rules = self.rules.lock().expect("rules poisoned");
        let rule = rules
            .iter_mut()
            .find(|r| r.matches(stage, user) && r.times != Some(0))?;
        if let Some(n) = rule.times.as_mut() {
            *n -= 1;
        }
        Some(rule.status)
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    fn provider(&self) -> &str {
        MOCK_PROVIDER
    }

    async fn send(&self, req: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let started = self.epoch.elapsed();
        let stage = PromptStage::infer(req.system_text());
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
        let failure = self.should_fail(stage, req.user.as_deref());
        self.calls.lock().expect("call log poisoned").push(MockCall {
            request_id: req.request_id.clone(),
            stage,
            user: req.user.clone(),
            model: req.model.clone(),
            temperature: req.temperature,
            system_text: req.system_text().to_owned(),
            user_text: req.user_text().to_owned(),
            started,
            finished: self.epoch.elapsed(),
            failed: failure.is_some(),
        });
        match failure {
            Some(status) => Err(TransportError::status(
                status,
                format!("mock failure in {} stage", stage.as_str()),
            )),
            None => Ok(mock_complete(req, self.seed)),
        }
    }
}

fn rng_for(req: &ChatRequest, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(req.system_text().as_bytes());
    h.update([0]);
    h.update(req.user_text().as_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(word) ^ seed)
}

fn pick<'a>(rng: &mut ChaCha8Rng, bank: &[&'a str]) -> &'a str {
    bank.choose(rng).copied().unwrap_or_default()
}

/// Trimmed sentences of `text`, each a substring of it.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let at_break = match c {
            '\n' => true,
            '.' | '!' | '?' => chars.peek().is_none_or(|(_, n)| n.is_whitespace()),
            _ => false,
        };
        if at_break {
            let end = i + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() && s != "." {
                out.push(s);
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    if out.is_empty() {
        out.push(text);
    }
    out
}

fn task_feedback(req: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
    let user = req.user_text();
    let mut parts = vec![pick(rng, &OPENERS).to_owned()];
    let ids = rubric_ids_in(user);
    if ids.is_empty() {
        parts.push("Compare your answer with the sample solution line by line.".into());
    }
    for id in ids {
        let applied = user
            .lines()
            .find(|l| l.contains(&format!("[{id}]")))
            .is_some_and(|l| l.trim_end().ends_with("(applied)"));
        let bank = if applied { &APPLIED } else { &NOT_APPLIED };
        parts.push(format!("Rubric item {id} {}", pick(rng, bank)));
    }
    parts.push(pick(rng, &CLOSERS).to_owned());
    parts.join(" ")
}

fn synthesis(req: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
    let tasks = req
        .user_text()
        .lines()
        .filter(|l| l.starts_with("Task ") && l.ends_with(':'))
        .count();
    let mut summary: Vec<&str> = SUMMARY.to_vec();
    summary.shuffle(rng);
    let mut out = format!("Across the {tasks} tasks of this assignment you worked steadily. ");
    out.push_str(&summary[..3].join(" "));
    if req.system_text().contains("process-based feedback") {
        out.push_str("\n\n");
        out.push_str(pick(rng, &PROCESS));
    }
    out.push_str("\n\n");
    out.push_str(pick(rng, &CLOSERS));
    out
}

fn evaluation(req: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
    let pool = sentences(req.user_text());
    let scores: Vec<CriterionScore> = Criterion::ALL
        .iter()
        .map(|&criterion| CriterionScore {
            criterion,
            score: rng.gen_range(5..=10),
            justification: pool.choose(rng).copied().unwrap_or_default().to_owned(),
        })
        .collect();
    to_evaluation_json(&scores)
}

fn highlight(req: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
    let pool = sentences(req.user_text());
    let map: serde_json::Map<String, serde_json::Value> = Criterion::ALL
        .iter()
        .map(|&c| {
            (
                score_key(c).to_owned(),
                pool.choose(rng).copied().unwrap_or_default().into(),
            )
        })
        .collect();
    serde_json::Value::Object(map).to_string()
}

/// The mock's answer to `req`, as a pure function of the seed and content.
pub fn mock_complete(req: &ChatRequest, seed: u64) -> ChatResponse {
    let mut rng = rng_for(req, seed);
    let content = match PromptStage::infer(req.system_text()) {
        PromptStage::TaskFeedback => task_feedback(req, &mut rng),
        PromptStage::Synthesis => synthesis(req, &mut rng),
        PromptStage::Evaluation => evaluation(req, &mut rng),
        PromptStage::Highlight => highlight(req, &mut rng),
    };
    let words = |s: &str| s.split_whitespace().count() as u64;
    ChatResponse {
        prompt_tokens: req.messages.iter().map(|m| words(&m.content)).sum(),
        completion_tokens: words(&content),
        content,
        latency_ms: 0,
        provider: MOCK_PROVIDER.to_owned(),
        request_id: req.request_id.clone(),
        attempts: 1,
    }
}
