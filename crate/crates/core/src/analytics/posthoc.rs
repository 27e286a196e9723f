use serde::{Deserialize, Serialize};

use super::dist::t_two_sided;
use super::{AnalyticsError, DLabel};
use crate::scalar::{mean, sum_sq_dev, Scalar};

/// One Bonferroni-adjusted pairwise comparison. Signs follow `a − b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison<T> {
    pub group_a: String,
    pub group_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: T,
    pub mean_b: T,
    pub t_value: T,
    pub df: T,
    pub p_raw: T,
    pub p_adjusted: T,
    pub cohen_d: T,
    pub d_label: DLabel,
}

/// `min(1, p · m)` for each of the `m` raw p-values.
pub fn bonferroni_adjust<T: Scalar>(p_raw: &[T]) -> Vec<T> {
    let m = T::from_count(p_raw.len());
    p_raw.iter().map(|&p| (p * m).min(T::one())).collect()
}

fn check_group<T>(name: &str, g: &[T]) -> Result<(), AnalyticsError> {
    if g.len() < 2 {
        return Err(AnalyticsError::DegenerateGroup(format!(
            "group {name} has {} value(s), need at least 2",
            g.len()
        )));
    }
    Ok(())
}

struct Pooled<T> {
    diff: T,
    sd: T,
    df: usize,
    se_factor: T,
}

fn pooled<T: Scalar>(a: &[T], b: &[T]) -> Pooled<T> {
    let (ma, mb) = (mean(a), mean(b));
    let df = a.len() + b.len() - 2;
    let var = (sum_sq_dev(a, ma) + sum_sq_dev(b, mb)) / T::from_count(df);
    let se_factor = (T::from_count(a.len()).recip() + T::from_count(b.len()).recip()).sqrt();
    Pooled {
        diff: ma - mb,
        sd: var.sqrt(),
        df,
        se_factor,
    }
}

/// Ratio `num / den` where a zero denominator gives 0 for a zero numerator
/// and the largest finite value with the numerator's sign otherwise.
fn saturating_ratio<T: Scalar>(num: T, den: T, scale: T) -> T {
    let tiny = scale * T::epsilon() * T::lit(1e3);
    if num.abs() <= tiny {
        T::zero()
    } else if den <= tiny {
        T::max_value() * num.signum()
    } else {
        num / den
    }
}

fn scale_of<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().chain(b).fold(T::zero(), |m, &x| m.max(x.abs()))
}

/// Cohen's d, `(mean_a − mean_b) / pooled sd`.
pub fn cohen_d<T: Scalar>(a: &[T], b: &[T]) -> Result<T, AnalyticsError> {
    check_group("a", a)?;
    check_group("b", b)?;
    let p = pooled(a, b);
    Ok(saturating_ratio(p.diff, p.sd, scale_of(a, b)))
}

/// Pooled-variance two-sample t statistic and its degrees of freedom.
pub fn pooled_t<T: Scalar>(a: &[T], b: &[T]) -> Result<(T, usize), AnalyticsError> {
    check_group("a", a)?;
    check_group("b", b)?;
    let p = pooled(a, b);
    Ok((saturating_ratio(p.diff, p.sd * p.se_factor, scale_of(a, b)), p.df))
}

/// All unordered pairs of `groups`, in input order, with pooled-variance t
/// tests and Bonferroni adjustment over the number of pairs.
pub fn pairwise_bonferroni<T: Scalar, S: AsRef<str>, G: AsRef<[T]>>(
    groups: &[(S, G)],
) -> Result<Vec<PairwiseComparison<T>>, AnalyticsError> {
    if groups.len() < 2 {
        return Err(AnalyticsError::DegenerateGroup(format!(
            "need at least 2 groups, got {}",
            groups.len()
        )));
    }
    for (name, g) in groups {
        check_group(name.as_ref(), g.as_ref())?;
    }
    let mut out = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let (na, a) = (&groups[i].0, groups[i].1.as_ref());
            let (nb, b) = (&groups[j].0, groups[j].1.as_ref());
            let (t, df) = pooled_t(a, b)?;
            let d = cohen_d(a, b)?;
            let df_t = T::from_count(df);
            let p_raw = if t.abs() == T::max_value() {
                T::zero()
            } else {
                t_two_sided(t, df_t)
            };
            out.push(PairwiseComparison {
                group_a: na.as_ref().to_string(),
                group_b: nb.as_ref().to_string(),
                n_a: a.len(),
                n_b: b.len(),
                mean_a: mean(a),
                mean_b: mean(b),
                t_value: t,
                df: df_t,
                p_raw,
                p_adjusted: p_raw,
                cohen_d: d,
                d_label: DLabel::from_d(d.to_f64().unwrap_or(0.0)),
            });
        }
    }
    let raw: Vec<T> = out.iter().map(|c| c.p_raw).collect();
    for (c, p) in out.iter_mut().zip(bonferroni_adjust(&raw)) {
        c.p_adjusted = p;
    }
    Ok(out)
}
