//! Parsing of evaluation-model output, quote location and triage.

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Criterion, CriterionScore, EvaluationReport, HighlightSpan, MatchKind, TriageCategory};

pub const MAX_SCORE: u8 = 10;
const JUSTIFICATION_SUFFIX: &str = "-justification";

/// Canonical JSON key for a criterion's score.
pub fn score_key(criterion: Criterion) -> &'static str {
    match criterion {
        Criterion::Constructive => "constructive_feedback",
        Criterion::Empathetic => "empathetic_feedback",
        Criterion::DetailedActionable => "detailed_and_actionable_feedback",
        Criterion::SelfReflectionIndependence => "encouraging_self_reflection_and_independence",
    }
}

pub fn justification_key(criterion: Criterion) -> String {
    format!("{}{JUSTIFICATION_SUFFIX}", score_key(criterion))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvaluationError {
    #[error("no JSON object found in model output")]
    NotJson,
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("score for {criterion} out of range: {value}")]
    ScoreOutOfRange { criterion: Criterion, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("bad triage config: green_min {green_min} must be >= amber_min {amber_min} and <= 10")]
pub struct BadConfig {
    pub green_min: u8,
    pub amber_min: u8,
}

/// Thresholds on the minimum criterion score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TriageConfig {
    pub green_min: u8,
    pub amber_min: u8,
}

impl Default for TriageConfig {
    fn default() -> Self {
        TriageConfig {
            green_min: 8,
            amber_min: 6,
        }
    }
}

impl TriageConfig {
    pub fn validate(&self) -> Result<(), BadConfig> {
        if self.green_min < self.amber_min || self.green_min > MAX_SCORE {
            Err(BadConfig {
                green_min: self.green_min,
                amber_min: self.amber_min,
            })
        } else {
            Ok(())
        }
    }
}

/// Returns the outermost balanced `{...}` object starting at the first `{`,
/// respecting JSON string quoting.
pub fn extract_json_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in raw[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn normalize_key(key: &str) -> String {
    key.replace('\\', "").trim().to_ascii_lowercase()
}

/// Parses the evaluation JSON into four scores in criterion order.
///
/// Surrounding prose and code fences are ignored. Keys may carry the
/// backslash-escaped underscores of the typeset prompt. Scores must be
/// integral numbers in `0..=10`.
pub fn parse_evaluation_json(raw: &str) -> Result<[CriterionScore; 4], EvaluationError> {
    let object = extract_json_object(raw).ok_or(EvaluationError::NotJson)?;
    let value: Value = match serde_json::from_str(object) {
        Ok(v) => v,
        // `\_` is not a valid JSON escape; models sometimes copy it from the prompt.
        Err(_) => serde_json::from_str(&object.replace("\\_", "_")).map_err(|_| EvaluationError::NotJson)?,
    };
    let Value::Object(map) = value else {
        return Err(EvaluationError::NotJson);
    };
    let map: Map<String, Value> = map.into_iter().map(|(k, v)| (normalize_key(&k), v)).collect();

    let expected: Vec<String> = Criterion::ALL
        .iter()
        .flat_map(|&c| [score_key(c).to_owned(), justification_key(c)])
        .collect();
    let missing: Vec<&str> = expected
        .iter()
        .filter(|k| !map.contains_key(k.as_str()))
        .map(String::as_str)
        .collect();
    let extra: Vec<&str> = map
        .keys()
        .filter(|k| !expected.contains(k))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(EvaluationError::SchemaError(format!(
            "missing keys {missing:?}, unexpected keys {extra:?}"
        )));
    }

    let parse_one = |criterion: Criterion| -> Result<CriterionScore, EvaluationError> {
        let score = match &map[score_key(criterion)] {
            Value::Number(n) => n.as_f64().unwrap_or(f64::NAN),
            other => {
                return Err(EvaluationError::SchemaError(format!(
                    "{} must be a number, got {other}",
                    score_key(criterion)
                )))
            }
        };
        if score.fract() != 0.0 || !score.is_finite() {
            return Err(EvaluationError::SchemaError(format!(
                "{} must be an integer, got {score}",
                score_key(criterion)
            )));
        }
        if !(0.0..=f64::from(MAX_SCORE)).contains(&score) {
            return Err(EvaluationError::ScoreOutOfRange {
                criterion,
                value: score,
            });
        }
        let justification = match &map[&justification_key(criterion)] {
            Value::String(s) => s.clone(),
            other => {
                return Err(EvaluationError::SchemaError(format!(
                    "{} must be a string, got {other}",
                    justification_key(criterion)
                )))
            }
        };
        Ok(CriterionScore {
            criterion,
            score: score as u8,
            justification,
        })
    };

    Ok([
        parse_one(Criterion::Constructive)?,
        parse_one(Criterion::Empathetic)?,
        parse_one(Criterion::DetailedActionable)?,
        parse_one(Criterion::SelfReflectionIndependence)?,
    ])
}

/// Serializes scores with the canonical keys, the inverse of [`parse_evaluation_json`].
pub fn to_evaluation_json(scores: &[CriterionScore]) -> String {
    let mut map = Map::new();
    for s in scores {
        map.insert(score_key(s.criterion).to_owned(), Value::from(s.score));
        map.insert(justification_key(s.criterion), Value::from(s.justification.clone()));
    }
    Value::Object(map).to_string()
}

/// Whitespace-collapsed copy of `text` with, for every byte of the copy,
/// the byte range in the original it came from.
fn normalize_with_map(text: &str) -> (String, Vec<(usize, usize)>) {
    let mut out = String::with_capacity(text.len());
    let mut map = Vec::with_capacity(text.len());
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c.is_whitespace() {
            let mut end = i + c.len_utf8();
            while let Some(&(j, d)) = chars.peek() {
                if !d.is_whitespace() {
                    break;
                }
                end = j + d.len_utf8();
                chars.next();
            }
            out.push(' ');
            map.push((i, end));
        } else {
            let end = i + c.len_utf8();
            out.push(c);
            map.extend(std::iter::repeat_n((i, end), c.len_utf8()));
        }
    }
    (out, map)
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Finds one quote in `feedback`: exact first, then whitespace-normalized.
pub fn locate_quote(feedback: &str, criterion: Criterion, quote: &str) -> HighlightSpan {
    if quote.is_empty() || feedback.is_empty() {
        return HighlightSpan::unresolved(criterion);
    }
    if let Some(start) = feedback.find(quote) {
        return HighlightSpan {
            criterion,
            start,
            end: start + quote.len(),
            resolved: true,
            match_kind: MatchKind::Exact,
        };
    }
    let needle = normalize(quote);
    if needle.is_empty() {
        return HighlightSpan::unresolved(criterion);
    }
    let (haystack, map) = normalize_with_map(feedback);
    match haystack.find(&needle) {
        Some(pos) => {
            let start = map[pos].0;
            let end = map[pos + needle.len() - 1].1;
            HighlightSpan {
                criterion,
                start,
                end,
                resolved: true,
                match_kind: MatchKind::Normalized,
            }
        }
        None => HighlightSpan::unresolved(criterion),
    }
}

/// One span per score, in the order given. Never fails: quotes that cannot be
/// found produce unresolved spans.
pub fn locate_quotes(feedback: &str, scores: &[CriterionScore]) -> Vec<HighlightSpan> {
    scores
        .iter()
        .map(|s| locate_quote(feedback, s.criterion, &s.justification))
        .collect()
}

pub fn feedback_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Builds the full report for `feedback` from parsed scores.
pub fn build_report(feedback: &str, scores: &[CriterionScore]) -> EvaluationReport {
    let mean_score = if scores.is_empty() {
        0.0
    } else {
        scores.iter().map(|s| f64::from(s.score)).sum::<f64>() / scores.len() as f64
    };
    EvaluationReport {
        scores: scores.to_vec(),
        mean_score,
        spans: locate_quotes(feedback, scores),
        feedback_hash: feedback_hash(feedback),
    }
}

/// Recomputes spans and hash after the text changed; scores stay as they were.
pub fn relocate(report: &EvaluationReport, feedback: &str) -> EvaluationReport {
    EvaluationReport {
        spans: locate_quotes(feedback, &report.scores),
        feedback_hash: feedback_hash(feedback),
        ..report.clone()
    }
}

/// Traffic-light category from the minimum criterion score.
pub fn triage(report: &EvaluationReport, cfg: &TriageConfig) -> Result<TriageCategory, BadConfig> {
    cfg.validate()?;
    let min = report.min_score();
    Ok(if min >= cfg.green_min && report.all_spans_resolved() {
        TriageCategory::ReadyToDeliver
    } else if min >= cfg.amber_min {
        TriageCategory::ReviewDesirable
    } else {
        TriageCategory::ReviewRequired
    })
}

/// Converts a byte offset in `text` to a count of Unicode scalar values.
pub fn byte_to_char_offset(text: &str, byte: usize) -> usize {
    text[..byte.min(text.len())].chars().count()
}
