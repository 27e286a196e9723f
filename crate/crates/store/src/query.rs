use copilot_core::analytics::AchievementLevel;
use copilot_core::{FeedbackRecord, LifecycleState, PromptVariant, TriageCategory};
use serde::{Deserialize, Serialize};

use crate::error::StoreError;

pub const MAX_LIMIT: usize = 500;
pub const DEFAULT_LIMIT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    /// Review-queue order: red, then amber, then green, each by ascending
    /// mean score; untriaged records last.
    #[default]
    MeanScoreAsc,
    MeanScoreDesc,
    RecordId,
}

impl SortOrder {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean_score" | "mean_score_asc" => Some(SortOrder::MeanScoreAsc),
            "-mean_score" | "mean_score_desc" => Some(SortOrder::MeanScoreDesc),
            "record_id" => Some(SortOrder::RecordId),
            _ => None,
        }
    }

    pub(crate) fn sql(self) -> &'static str {
        match self {
            SortOrder::MeanScoreAsc => {
                "CASE f.triage WHEN 'review_required' THEN 0 WHEN 'review_desirable' THEN 1 \
                 WHEN 'ready_to_deliver' THEN 2 ELSE 3 END, \
                 f.mean_score IS NULL, f.mean_score ASC, f.record_id ASC"
            }
            SortOrder::MeanScoreDesc => "f.mean_score IS NULL, f.mean_score DESC, f.record_id ASC",
            SortOrder::RecordId => "f.record_id ASC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordQuery {
    pub assignment_id: Option<String>,
    pub state: Option<LifecycleState>,
    pub triage: Option<TriageCategory>,
    pub achievement: Option<AchievementLevel>,
    pub variant: Option<PromptVariant>,
    pub sort: SortOrder,
    pub offset: usize,
    pub limit: usize,
}

impl Default for RecordQuery {
    fn default() -> Self {
        RecordQuery {
            assignment_id: None,
            state: None,
            triage: None,
            achievement: None,
            variant: None,
            sort: SortOrder::default(),
            offset: 0,
            limit: DEFAULT_LIMIT,
        }
    }
}

impl RecordQuery {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.limit == 0 || self.limit > MAX_LIMIT {
            return Err(StoreError::InvalidQuery(format!(
                "limit must be in 1..={MAX_LIMIT}, got {}",
                self.limit
            )));
        }
        Ok(())
    }
}

/// A record with the version token a writer must present to replace it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionedRecord {
    pub version: u64,
    #[serde(default)]
    pub achievement: Option<AchievementLevel>,
    pub record: FeedbackRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    /// Matches before pagination.
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub items: Vec<VersionedRecord>,
}
