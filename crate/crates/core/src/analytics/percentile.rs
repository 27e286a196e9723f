use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AchievementLevel {
    Low,
    Medium,
    High,
}

impl AchievementLevel {
    pub const ALL: [AchievementLevel; 3] = [AchievementLevel::Low, AchievementLevel::Medium, AchievementLevel::High];

    pub fn as_str(self) -> &'static str {
        match self {
            AchievementLevel::Low => "low",
            AchievementLevel::Medium => "medium",
            AchievementLevel::High => "high",
        }
    }
}

impl fmt::Display for AchievementLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AchievementLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(AchievementLevel::Low),
            "medium" => Ok(AchievementLevel::Medium),
            "high" => Ok(AchievementLevel::High),
            other => Err(format!("unknown achievement level {other:?}")),
        }
    }
}

/// Tertile thresholds and the level assigned to each student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AchievementSplit<T> {
    pub p33: T,
    pub p66: T,
    pub levels: BTreeMap<String, AchievementLevel>,
}

impl<T: Scalar> AchievementSplit<T> {
    pub fn level_for(&self, grade: T) -> AchievementLevel {
        if grade < self.p33 {
            AchievementLevel::Low
        } else if grade < self.p66 {
            AchievementLevel::Medium
        } else {
            AchievementLevel::High
        }
    }
}

/// Sample quantile by linear interpolation between order statistics
/// (`h = (n − 1)p + 1`, one-based). `sorted` must be ascending and non-empty.
pub fn percentile_type7<T: Scalar>(sorted: &[T], p: T) -> T {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let n = sorted.len();
    let h = T::from_count(n - 1) * p;
    let lo = h.floor();
    let i = lo.to_usize().unwrap_or(0).min(n - 1);
    if i + 1 >= n {
        return sorted[n - 1];
    }
    sorted[i] + (h - lo) * (sorted[i + 1] - sorted[i])
}

/// Splits students into Low / Medium / High at the 33rd and 66th percentiles
/// of their grades: `grade < p33` is Low, `grade < p66` is Medium.
pub fn split_achievement<T: Scalar, S: AsRef<str>>(grades: &[(S, T)]) -> Result<AchievementSplit<T>, AnalyticsError> {
    if grades.len() < 3 {
        return Err(AnalyticsError::TooFewStudents(grades.len()));
    }
    if let Some((id, _)) = grades.iter().find(|(_, g)| !g.is_finite()) {
        return Err(AnalyticsError::InsufficientData(format!(
            "grade for {} is not finite",
            id.as_ref()
        )));
    }
    let mut sorted: Vec<T> = grades.iter().map(|(_, g)| *g).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut split = AchievementSplit {
        p33: percentile_type7(&sorted, T::lit(0.33)),
        p66: percentile_type7(&sorted, T::lit(0.66)),
        levels: BTreeMap::new(),
    };
    for (id, g) in grades {
        let level = split.level_for(*g);
        split.levels.insert(id.as_ref().to_string(), level);
    }
    Ok(split)
}
