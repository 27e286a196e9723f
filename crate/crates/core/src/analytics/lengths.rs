use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::percentile::percentile_type7;
use crate::model::FeedbackRecord;

/// Number of Unicode scalar values in `text`.
pub fn symbol_count(text: &str) -> usize {
    text.chars().count()
}

/// Distribution of feedback lengths within one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl LengthSummary {
    /// Summary of a non-empty list of lengths; `None` when empty.
    pub fn from_lengths(lengths: &[usize]) -> Option<Self> {
        if lengths.is_empty() {
            return None;
        }
        let mut xs: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
        xs.sort_by(|a, b| a.total_cmp(b));
        Some(LengthSummary {
            n: xs.len(),
            min: xs[0],
            q1: percentile_type7(&xs, 0.25),
            median: percentile_type7(&xs, 0.5),
            q3: percentile_type7(&xs, 0.75),
            max: xs[xs.len() - 1],
            mean: xs.iter().sum::<f64>() / xs.len() as f64,
        })
    }
}

/// Per-group length summaries of the effective feedback text. Records with
/// no feedback text are skipped.
pub fn length_stats<K, F>(records: &[FeedbackRecord], group_by: F) -> BTreeMap<K, LengthSummary>
where
    K: Ord,
    F: Fn(&FeedbackRecord) -> K,
{
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for r in records {
        if let Ok(text) = r.effective_feedback_text() {
            groups.entry(group_by(r)).or_default().push(symbol_count(text));
        }
    }
    groups
        .into_iter()
        .filter_map(|(k, v)| LengthSummary::from_lengths(&v).map(|s| (k, s)))
        .collect()
}
