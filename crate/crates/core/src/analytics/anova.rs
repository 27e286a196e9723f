use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dist::f_sf;
use super::linalg::{least_squares, Matrix};
use super::{AnalyticsError, EffectLabel};
use crate::scalar::{mean, sum_sq_dev, Scalar};

/// An F test for one effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult<T> {
    pub f_value: T,
    pub df_between: usize,
    pub df_within: usize,
    pub p_value: T,
    pub eta2_partial: T,
    pub effect_label: EffectLabel,
    /// Sum of squares attributed to the effect.
    pub ss_effect: T,
    /// Residual sum of squares the effect was tested against.
    pub ss_residual: T,
    /// Set when the residual variance is zero but the effect is not; the
    /// F value is then capped at the largest finite value and p = 0.
    pub saturated: bool,
}

impl<T: Scalar> AnovaResult<T> {
    /// Builds the F test from sums of squares. `scale` is the magnitude of
    /// the data's total variation, below which sums of squares count as zero.
    pub(crate) fn from_sums(ss_effect: T, df_effect: usize, ss_resid: T, df_resid: usize, scale: T) -> Self {
        let tiny = scale * T::epsilon() * T::lit(1e3);
        let ss_effect = ss_effect.max(T::zero());
        let ss_resid = ss_resid.max(T::zero());
        let zero_effect = df_effect == 0 || ss_effect <= tiny;
        let zero_resid = ss_resid <= tiny;
        let (f_value, p_value, eta2, saturated) = if zero_effect {
            (T::zero(), T::one(), T::zero(), false)
        } else if zero_resid {
            (T::max_value(), T::zero(), T::one(), true)
        } else {
            let f = (ss_effect / T::from_count(df_effect)) / (ss_resid / T::from_count(df_resid));
            let p = f_sf(f, T::from_count(df_effect), T::from_count(df_resid));
            (f, p, ss_effect / (ss_effect + ss_resid), false)
        };
        AnovaResult {
            f_value,
            df_between: df_effect,
            df_within: df_resid,
            p_value,
            eta2_partial: eta2,
            effect_label: EffectLabel::from_eta2(eta2.to_f64().unwrap_or(0.0)),
            ss_effect,
            ss_residual: ss_resid,
            saturated,
        }
    }
}

fn check_groups<T, G: AsRef<[T]>>(groups: &[G]) -> Result<(), AnalyticsError> {
    if groups.len() < 2 {
        return Err(AnalyticsError::DegenerateGroup(format!(
            "need at least 2 groups, got {}",
            groups.len()
        )));
    }
    if let Some((i, g)) = groups.iter().enumerate().find(|(_, g)| g.as_ref().len() < 2) {
        return Err(AnalyticsError::DegenerateGroup(format!(
            "group {i} has {} value(s), need at least 2",
            g.as_ref().len()
        )));
    }
    Ok(())
}

/// Classical one-way ANOVA from the between/within decomposition.
pub fn one_way_anova<T: Scalar, G: AsRef<[T]>>(groups: &[G]) -> Result<AnovaResult<T>, AnalyticsError> {
    check_groups(groups)?;
    let all: Vec<T> = groups.iter().flat_map(|g| g.as_ref().iter().copied()).collect();
    let grand = mean(&all);
    let mut ssb = T::zero();
    let mut ssw = T::zero();
    for g in groups {
        let g = g.as_ref();
        let m = mean(g);
        ssb = ssb + T::from_count(g.len()) * (m - grand) * (m - grand);
        ssw = ssw + sum_sq_dev(g, m);
    }
    let k = groups.len();
    let n = all.len();
    let scale = sum_sq_dev(&all, grand).max(grand * grand);
    Ok(AnovaResult::from_sums(ssb, k - 1, ssw, n - k, scale))
}

/// Levene's test: one-way ANOVA on absolute deviations from each group's mean.
pub fn levene_test<T: Scalar, G: AsRef<[T]>>(groups: &[G]) -> Result<AnovaResult<T>, AnalyticsError> {
    check_groups(groups)?;
    let deviations: Vec<Vec<T>> = groups
        .iter()
        .map(|g| {
            let g = g.as_ref();
            let m = mean(g);
            g.iter().map(|&x| (x - m).abs()).collect()
        })
        .collect();
    one_way_anova(&deviations)
}

/// Type II tables for a two-factor design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoWayAnova<T> {
    pub factor_a: AnovaResult<T>,
    pub factor_b: AnovaResult<T>,
    pub interaction: Option<AnovaResult<T>>,
}

fn levels<L: Ord + Clone>(labels: &[L]) -> Vec<L> {
    let mut v: Vec<L> = labels.to_vec();
    v.sort();
    v.dedup();
    v
}

/// Treatment-coded indicator columns, first level as baseline.
fn dummies<L: Ord + Clone>(labels: &[L]) -> Vec<Vec<f64>> {
    let lv = levels(labels);
    let index: BTreeMap<&L, usize> = lv.iter().enumerate().map(|(i, l)| (l, i)).collect();
    (1..lv.len())
        .map(|level| {
            labels
                .iter()
                .map(|l| if index[l] == level { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

fn design<T: Scalar>(n: usize, blocks: &[&[Vec<f64>]]) -> Matrix<T> {
    let cols: Vec<&Vec<f64>> = blocks.iter().flat_map(|b| b.iter()).collect();
    let mut m = Matrix::zeros(n, 1 + cols.len());
    for i in 0..n {
        m[(i, 0)] = T::one();
        for (j, c) in cols.iter().enumerate() {
            m[(i, j + 1)] = T::lit(c[i]);
        }
    }
    m
}

/// Two-way ANOVA with Type II sums of squares by model comparison:
/// `SS(A|B) = RSS(B) − RSS(A+B)` and symmetrically for B; the interaction
/// is `RSS(A+B) − RSS(A+B+AB)`. Every effect is tested against the
/// residual of the largest fitted model.
pub fn two_way_anova_type2<T: Scalar, L: Ord + Clone>(
    values: &[T],
    factor_a: &[L],
    factor_b: &[L],
    include_interaction: bool,
) -> Result<TwoWayAnova<T>, AnalyticsError> {
    let n = values.len();
    if factor_a.len() != n || factor_b.len() != n {
        return Err(AnalyticsError::DimensionMismatch(format!(
            "{n} values, {} labels for A, {} labels for B",
            factor_a.len(),
            factor_b.len()
        )));
    }
    if n == 0 {
        return Err(AnalyticsError::InsufficientData("no observations".into()));
    }
    // Centre y so that constant data gives exactly zero sums of squares.
    let grand = mean(values);
    let y: Vec<T> = values.iter().map(|&v| v - grand).collect();
    let scale = sum_sq_dev(values, grand).max(grand * grand);

    let da = dummies(factor_a);
    let db = dummies(factor_b);
    let dab: Vec<Vec<f64>> = da
        .iter()
        .flat_map(|a| db.iter().map(move |b| a.iter().zip(b).map(|(x, y)| x * y).collect()))
        .collect();

    let fit_a = least_squares(&design::<T>(n, &[&da]), &y);
    let fit_b = least_squares(&design::<T>(n, &[&db]), &y);
    let fit_ab = least_squares(&design::<T>(n, &[&da, &db]), &y);
    let expected_rank = 1 + da.len() + db.len();
    if fit_ab.rank < expected_rank {
        return Err(AnalyticsError::RankDeficientDesign(format!(
            "main-effects design has rank {} < {expected_rank}; the factors are confounded",
            fit_ab.rank
        )));
    }
    let full = if include_interaction {
        Some(least_squares(&design::<T>(n, &[&da, &db, &dab]), &y))
    } else {
        None
    };
    let resid = full.unwrap_or(fit_ab);
    if resid.rank >= n {
        return Err(AnalyticsError::InsufficientData(format!(
            "no residual degrees of freedom ({n} observations, rank {})",
            resid.rank
        )));
    }
    let df_resid = n - resid.rank;

    let factor_a = AnovaResult::from_sums(
        fit_b.rss - fit_ab.rss,
        fit_ab.rank - fit_b.rank,
        resid.rss,
        df_resid,
        scale,
    );
    let factor_b = AnovaResult::from_sums(
        fit_a.rss - fit_ab.rss,
        fit_ab.rank - fit_a.rank,
        resid.rss,
        df_resid,
        scale,
    );
    let interaction = full.map(|full| {
        AnovaResult::from_sums(
            fit_ab.rss - full.rss,
            full.rank - fit_ab.rank,
            resid.rss,
            df_resid,
            scale,
        )
    });
    Ok(TwoWayAnova {
        factor_a,
        factor_b,
        interaction,
    })
}
