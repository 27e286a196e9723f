//! Assembles the analysis tables from per-record observations and writes
//! them as CSV.

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::lengths::{symbol_count, LengthSummary};
use super::manova::ManovaResult;
use super::percentile::AchievementLevel;
use super::posthoc::PairwiseComparison;
use super::{levene_test, manova_one_way, one_way_anova, pairwise_bonferroni, two_way_anova_type2};
use super::{AnalyticsError, AnovaResult, TwoWayAnova};
use crate::model::{Criterion, FeedbackRecord, PromptVariant};
use crate::scalar::mean;

/// One evaluated feedback text, flattened for analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub record_id: String,
    pub student_id: String,
    pub variant: PromptVariant,
    pub achievement: Option<AchievementLevel>,
    /// Criterion scores in [`Criterion::ALL`] order.
    pub scores: [f64; 4],
    pub mean_score: f64,
    pub length: usize,
}

impl Observation {
    /// `None` for records without an evaluation.
    pub fn from_record(record: &FeedbackRecord, achievement: Option<AchievementLevel>) -> Option<Self> {
        let eval = record.evaluation.as_ref()?;
        let mut scores = [0.0; 4];
        for c in Criterion::ALL {
            scores[c.index()] = f64::from(eval.score(c)?);
        }
        Some(Observation {
            record_id: record.record_id.clone(),
            student_id: record.student_id.clone(),
            variant: record.variant,
            achievement,
            scores,
            mean_score: eval.mean_score,
            length: record.effective_feedback_text().map(symbol_count).unwrap_or(0),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Variant,
    Achievement,
}

impl FromStr for Factor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "variant" => Ok(Factor::Variant),
            "achievement" => Ok(Factor::Achievement),
            other => Err(format!("unknown factor {other:?}; expected variant or achievement")),
        }
    }
}

fn label_of(o: &Observation, factor: Factor) -> Option<String> {
    match factor {
        Factor::Variant => Some(o.variant.as_str().to_string()),
        Factor::Achievement => o.achievement.map(|a| a.as_str().to_string()),
    }
}

fn sort_key(label: &str) -> (usize, String) {
    let rank = match label {
        "base" | "low" => 0,
        "advanced" | "medium" => 1,
        "high" => 2,
        _ => 3,
    };
    (rank, label.to_string())
}

/// Groups `value(o)` by factor level, in a stable level order.
fn grouped<F: Fn(&Observation) -> f64>(obs: &[Observation], factor: Factor, value: F) -> Vec<(String, Vec<f64>)> {
    let mut map: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for o in obs {
        if let Some(l) = label_of(o, factor) {
            map.entry(sort_key(&l)).or_default().push(value(o));
        }
    }
    map.into_iter().map(|((_, l), v)| (l, v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub mean: f64,
}

fn summaries(groups: &[(String, Vec<f64>)]) -> Vec<GroupSummary> {
    groups
        .iter()
        .map(|(l, v)| GroupSummary {
            label: l.clone(),
            n: v.len(),
            mean: mean(v),
        })
        .collect()
}

/// A named row of an ANOVA table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub effect: String,
    pub result: AnovaResult<f64>,
}

impl EffectRow {
    fn new(effect: impl Into<String>, result: AnovaResult<f64>) -> Self {
        EffectRow {
            effect: effect.into(),
            result,
        }
    }
}

/// Overall quality by variant: one-way ANOVA on the mean criterion score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1Report {
    pub groups: Vec<GroupSummary>,
    pub anova: EffectRow,
    pub levene: EffectRow,
}

pub fn rq1(obs: &[Observation]) -> Result<Rq1Report, AnalyticsError> {
    let groups = grouped(obs, Factor::Variant, |o| o.mean_score);
    let values: Vec<&Vec<f64>> = groups.iter().map(|(_, v)| v).collect();
    Ok(Rq1Report {
        anova: EffectRow::new("variant", one_way_anova(&values)?),
        levene: EffectRow::new("levene(variant)", levene_test(&values)?),
        groups: summaries(&groups),
    })
}

/// Criterion profile by variant: MANOVA over the four scores, then one
/// follow-up ANOVA per criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq2Report {
    pub manova: ManovaResult<f64>,
    pub followups: Vec<EffectRow>,
}

pub fn rq2(obs: &[Observation]) -> Result<Rq2Report, AnalyticsError> {
    let rows: Vec<Vec<f64>> = obs.iter().map(|o| o.scores.to_vec()).collect();
    let labels: Vec<PromptVariant> = obs.iter().map(|o| o.variant).collect();
    let manova = manova_one_way(&rows, &labels)?;
    let mut followups = Vec::new();
    for c in Criterion::ALL {
        let groups = grouped(obs, Factor::Variant, |o| o.scores[c.index()]);
        let values: Vec<&Vec<f64>> = groups.iter().map(|(_, v)| v).collect();
        followups.push(EffectRow::new(c.as_str(), one_way_anova(&values)?));
    }
    Ok(Rq2Report { manova, followups })
}

/// Equity across achievement levels: two-way Type II ANOVA of variant ×
/// achievement, pairwise comparisons between achievement levels, and
/// feedback length per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq3Report {
    pub effects: Vec<EffectRow>,
    pub pairwise: Vec<PairwiseComparison<f64>>,
    pub lengths: Vec<LengthRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub variant: PromptVariant,
    pub achievement: AchievementLevel,
    pub summary: LengthSummary,
}

pub fn rq3(obs: &[Observation]) -> Result<Rq3Report, AnalyticsError> {
    let with_level: Vec<&Observation> = obs.iter().filter(|o| o.achievement.is_some()).collect();
    if with_level.len() < obs.len() {
        return Err(AnalyticsError::InsufficientData(format!(
            "{} observation(s) have no achievement level",
            obs.len() - with_level.len()
        )));
    }
    let values: Vec<f64> = obs.iter().map(|o| o.mean_score).collect();
    let variant: Vec<String> = obs.iter().map(|o| o.variant.as_str().to_string()).collect();
    let level: Vec<String> = obs
        .iter()
        .map(|o| o.achievement.expect("checked").as_str().to_string())
        .collect();
    let TwoWayAnova {
        factor_a,
        factor_b,
        interaction,
    } = two_way_anova_type2(&values, &variant, &level, true)?;
    let mut effects = vec![
        EffectRow::new("variant", factor_a),
        EffectRow::new("achievement", factor_b),
    ];
    if let Some(i) = interaction {
        effects.push(EffectRow::new("variant:achievement", i));
    }
    let groups = grouped(obs, Factor::Achievement, |o| o.mean_score);
    let pairwise = pairwise_bonferroni(&groups)?;

    let mut cells: BTreeMap<(PromptVariant, AchievementLevel), Vec<usize>> = BTreeMap::new();
    for o in obs {
        cells
            .entry((o.variant, o.achievement.expect("checked")))
            .or_default()
            .push(o.length);
    }
    let lengths = cells
        .into_iter()
        .filter_map(|((variant, achievement), v)| {
            LengthSummary::from_lengths(&v).map(|summary| LengthRow {
                variant,
                achievement,
                summary,
            })
        })
        .collect();
    Ok(Rq3Report {
        effects,
        pairwise,
        lengths,
    })
}

/// Comparison of groups defined by one factor, as served to the UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub factor: Factor,
    pub groups: Vec<GroupSummary>,
    pub anova: EffectRow,
    pub levene: EffectRow,
    pub criteria: Vec<EffectRow>,
    pub pairwise: Vec<PairwiseComparison<f64>>,
}

pub fn compare(obs: &[Observation], factor: Factor) -> Result<CompareReport, AnalyticsError> {
    let name = match factor {
        Factor::Variant => "variant",
        Factor::Achievement => "achievement",
    };
    let groups = grouped(obs, factor, |o| o.mean_score);
    let values: Vec<&Vec<f64>> = groups.iter().map(|(_, v)| v).collect();
    let mut criteria = Vec::new();
    for c in Criterion::ALL {
        let g = grouped(obs, factor, |o| o.scores[c.index()]);
        let v: Vec<&Vec<f64>> = g.iter().map(|(_, v)| v).collect();
        criteria.push(EffectRow::new(c.as_str(), one_way_anova(&v)?));
    }
    Ok(CompareReport {
        factor,
        anova: EffectRow::new(name, one_way_anova(&values)?),
        levene: EffectRow::new(format!("levene({name})"), levene_test(&values)?),
        criteria,
        pairwise: pairwise_bonferroni(&groups)?,
        groups: summaries(&groups),
    })
}

/// Compact numeric rendering: fixed point for ordinary magnitudes,
/// scientific otherwise.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if !x.is_finite() || x.abs() >= 1e6 || x.abs() < 1e-4 {
        format!("{x:e}")
    } else {
        let s = format!("{x:.6}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    }
}

pub const ANOVA_HEADER: [&str; 7] = ["effect", "F", "df1", "df2", "p", "eta2", "label"];

pub fn write_anova_csv<W: Write>(out: W, rows: &[&EffectRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ANOVA_HEADER)?;
    for row in rows {
        let r = &row.result;
        w.write_record([
            row.effect.clone(),
            fmt_num(r.f_value),
            r.df_between.to_string(),
            r.df_within.to_string(),
            fmt_num(r.p_value),
            fmt_num(r.eta2_partial),
            r.effect_label.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_manova_csv<W: Write>(out: W, m: &ManovaResult<f64>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["statistic", "value", "F", "df1", "df2", "p"])?;
    for a in &m.approximations {
        w.write_record([
            a.statistic.as_str().to_string(),
            fmt_num(a.value),
            fmt_num(a.approx_f),
            fmt_num(a.df1),
            fmt_num(a.df2),
            fmt_num(a.p_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pairwise_csv<W: Write>(out: W, rows: &[PairwiseComparison<f64>]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "group_a", "group_b", "n_a", "n_b", "mean_a", "mean_b", "t", "df", "p_raw", "p_adj", "d", "d_label",
    ])?;
    for c in rows {
        w.write_record([
            c.group_a.clone(),
            c.group_b.clone(),
            c.n_a.to_string(),
            c.n_b.to_string(),
            fmt_num(c.mean_a),
            fmt_num(c.mean_b),
            fmt_num(c.t_value),
            fmt_num(c.df),
            fmt_num(c.p_raw),
            fmt_num(c.p_adjusted),
            fmt_num(c.cohen_d),
            c.d_label.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_lengths_csv<W: Write>(out: W, rows: &[LengthRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "variant",
        "achievement",
        "n",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "mean",
    ])?;
    for r in rows {
        let s = &r.summary;
        w.write_record([
            r.variant.as_str().to_string(),
            r.achievement.as_str().to_string(),
            s.n.to_string(),
            fmt_num(s.min),
            fmt_num(s.q1),
            fmt_num(s.median),
            fmt_num(s.q3),
            fmt_num(s.max),
            fmt_num(s.mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}
