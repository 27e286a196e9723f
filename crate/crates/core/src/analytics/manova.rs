use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dist::f_sf;
use super::linalg::{generalized_eigenvalues, Matrix};
use super::AnalyticsError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManovaStatistic {
    Pillai,
    Wilks,
    HotellingLawley,
    Roy,
}

impl ManovaStatistic {
    pub fn as_str(self) -> &'static str {
        match self {
            ManovaStatistic::Pillai => "pillai",
            ManovaStatistic::Wilks => "wilks",
            ManovaStatistic::HotellingLawley => "hotelling",
            ManovaStatistic::Roy => "roy",
        }
    }
}

/// F approximation for one of the four test statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManovaApproximation<T> {
    pub statistic: ManovaStatistic,
    pub value: T,
    pub approx_f: T,
    pub df1: T,
    pub df2: T,
    pub p_value: T,
}

/// One-way MANOVA. `approx_f`, `df1`, `df2` and `p_value` are Rao's F for
/// Wilks' lambda; `approximations` carries the F approximation for every
/// statistic (see `docs/stats.md`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManovaResult<T> {
    pub pillai: T,
    pub wilks: T,
    pub hotelling: T,
    pub roy: T,
    pub approx_f: T,
    pub df1: T,
    pub df2: T,
    pub p_value: T,
    /// Eigenvalues of `E⁻¹H`, descending.
    pub eigenvalues: Vec<T>,
    pub approximations: Vec<ManovaApproximation<T>>,
}

/// One-way MANOVA of `observations` (n rows of p dependent variables) by `groups`.
pub fn manova_one_way<T: Scalar, L: Ord + Clone>(
    observations: &[Vec<T>],
    groups: &[L],
) -> Result<ManovaResult<T>, AnalyticsError> {
    let n = observations.len();
    if groups.len() != n {
        return Err(AnalyticsError::DimensionMismatch(format!(
            "{n} observations but {} group labels",
            groups.len()
        )));
    }
    let p = observations.first().map_or(0, Vec::len);
    if p == 0 {
        return Err(AnalyticsError::InsufficientData("no dependent variables".into()));
    }
    if let Some(row) = observations.iter().find(|r| r.len() != p) {
        return Err(AnalyticsError::DimensionMismatch(format!(
            "row with {} values, expected {p}",
            row.len()
        )));
    }
    let mut by_group: BTreeMap<&L, Vec<&Vec<T>>> = BTreeMap::new();
    for (row, g) in observations.iter().zip(groups) {
        by_group.entry(g).or_default().push(row);
    }
    let g = by_group.len();
    if g < 2 {
        return Err(AnalyticsError::DegenerateGroup(format!(
            "need at least 2 groups, got {g}"
        )));
    }
    if n <= p + g {
        return Err(AnalyticsError::InsufficientData(format!(
            "need more than p + groups = {} observations, got {n}",
            p + g
        )));
    }

    let col_mean = |rows: &[&Vec<T>]| -> Vec<T> {
        (0..p)
            .map(|j| rows.iter().map(|r| r[j]).sum::<T>() / T::from_count(rows.len()))
            .collect()
    };
    let all: Vec<&Vec<T>> = observations.iter().collect();
    let grand = col_mean(&all);

    let mut h: Matrix<T> = Matrix::zeros(p, p);
    let mut e: Matrix<T> = Matrix::zeros(p, p);
    for rows in by_group.values() {
        let m = col_mean(rows);
        let w = T::from_count(rows.len());
        for i in 0..p {
            for j in 0..p {
                h[(i, j)] = h[(i, j)] + w * (m[i] - grand[i]) * (m[j] - grand[j]);
            }
        }
        for r in rows {
            for i in 0..p {
                for j in 0..p {
                    e[(i, j)] = e[(i, j)] + (r[i] - m[i]) * (r[j] - m[j]);
                }
            }
        }
    }

    let eig = generalized_eigenvalues(&h, &e).ok_or(AnalyticsError::SingularError)?;
    // Eigenvalues of a PSD pencil; clip rounding below zero.
    let eig: Vec<T> = eig.into_iter().map(|l| l.max(T::zero())).collect();
    let one = T::one();
    let pillai: T = eig.iter().map(|&l| l / (one + l)).sum();
    let wilks: T = eig.iter().fold(one, |acc, &l| acc / (one + l));
    let hotelling: T = eig.iter().copied().sum();
    let roy = eig.first().copied().unwrap_or(T::zero());

    let q = g - 1;
    let df_error = n - g;
    let approximations = vec![
        pillai_f(pillai, p, q, df_error),
        wilks_rao_f(wilks, p, q, df_error),
        hotelling_f(hotelling, p, q, df_error),
        roy_f(roy, p, q, df_error),
    ];
    let rao = approximations[1].clone();
    Ok(ManovaResult {
        pillai,
        wilks,
        hotelling,
        roy,
        approx_f: rao.approx_f,
        df1: rao.df1,
        df2: rao.df2,
        p_value: rao.p_value,
        eigenvalues: eig,
        approximations,
    })
}

fn approx<T: Scalar>(statistic: ManovaStatistic, value: T, f: T, df1: T, df2: T) -> ManovaApproximation<T> {
    let f = if f.is_nan() { T::zero() } else { f.max(T::zero()) };
    ManovaApproximation {
        statistic,
        value,
        approx_f: f,
        df1,
        df2,
        p_value: f_sf(f, df1, df2),
    }
}

fn st<T: Scalar>(x: usize) -> T {
    T::from_count(x)
}

/// Rao's F approximation for Wilks' lambda with `p` variables, `q`
/// hypothesis df and `ve` error df.
fn wilks_rao_f<T: Scalar>(wilks: T, p: usize, q: usize, ve: usize) -> ManovaApproximation<T> {
    let (p_, q_, ve_) = (st::<T>(p), st::<T>(q), st::<T>(ve));
    let two = T::lit(2.0);
    let denom = p_ * p_ + q_ * q_ - T::lit(5.0);
    let t = if denom > T::zero() {
        ((p_ * p_ * q_ * q_ - T::lit(4.0)) / denom).sqrt()
    } else {
        T::one()
    };
    let df1 = p_ * q_;
    let w = ve_ + q_ - (p_ + q_ + T::one()) / two;
    let df2 = w * t - (p_ * q_ - two) / two;
    let root = wilks.powf(t.recip());
    let f = (T::one() - root) / root * df2 / df1;
    approx(ManovaStatistic::Wilks, wilks, f, df1, df2)
}

fn pillai_f<T: Scalar>(v: T, p: usize, q: usize, ve: usize) -> ManovaApproximation<T> {
    let s = st::<T>(p.min(q));
    let two = T::lit(2.0);
    let m = (st::<T>(p.abs_diff(q)) - T::one()) / two;
    let nn = (st::<T>(ve) - st::<T>(p) - T::one()) / two;
    let df1 = s * (two * m + s + T::one());
    let df2 = s * (two * nn + s + T::one());
    let f = (two * nn + s + T::one()) / (two * m + s + T::one()) * v / (s - v);
    approx(ManovaStatistic::Pillai, v, f, df1, df2)
}

fn hotelling_f<T: Scalar>(u: T, p: usize, q: usize, ve: usize) -> ManovaApproximation<T> {
    let s = st::<T>(p.min(q));
    let two = T::lit(2.0);
    let m = (st::<T>(p.abs_diff(q)) - T::one()) / two;
    let nn = (st::<T>(ve) - st::<T>(p) - T::one()) / two;
    let df1 = s * (two * m + s + T::one());
    let df2 = two * (s * nn + T::one());
    let f = df2 * u / (s * s * (two * m + s + T::one()));
    approx(ManovaStatistic::HotellingLawley, u, f, df1, df2)
}

/// Upper-bound F for Roy's largest root.
fn roy_f<T: Scalar>(theta: T, p: usize, q: usize, ve: usize) -> ManovaApproximation<T> {
    let r = st::<T>(p.max(q));
    let df1 = r;
    let df2 = st::<T>(ve) - r + st::<T>(q);
    let f = theta * df2 / df1;
    approx(ManovaStatistic::Roy, theta, f, df1, df2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_dv_reduction() {
        let obs: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0].iter().map(|&x| vec![x]).collect();
        let groups = ["a", "a", "a", "b", "b", "b"];
        let r = manova_one_way(&obs, &groups).unwrap();
        assert!((r.wilks - 4.0 / 17.5).abs() < 1e-12);
        assert!((r.pillai - 13.5 / 17.5).abs() < 1e-12);
        assert!((r.approx_f - 13.5).abs() < 1e-9);
        assert!((r.df1 - 1.0).abs() < 1e-12 && (r.df2 - 4.0).abs() < 1e-12);
        // every approximation is exact with one DV and two groups
        for a in &r.approximations {
            assert!((a.approx_f - 13.5).abs() < 1e-9, "{:?}", a.statistic);
        }
    }

    #[test]
    fn identical_means_give_null_statistics() {
        let obs = vec![
            vec![1.0f64, 2.0],
            vec![3.0, 1.0],
            vec![2.0, 3.0],
            vec![1.0, 2.0],
            vec![3.0, 1.0],
            vec![2.0, 3.0],
        ];
        let groups = [0, 0, 0, 1, 1, 1];
        let r = manova_one_way(&obs, &groups).unwrap();
        assert!(r.pillai.abs() < 1e-12);
        assert!((r.wilks - 1.0).abs() < 1e-12);
        assert!(r.hotelling.abs() < 1e-12);
        assert!(r.roy.abs() < 1e-12);
    }

    #[test]
    fn singular_error_matrix() {
        // second DV is an exact copy of the first
        let obs: Vec<Vec<f64>> = [1.0, 2.0, 4.0, 4.0, 5.0, 7.0].iter().map(|&x| vec![x, x]).collect();
        let groups = [0, 0, 0, 1, 1, 1];
        assert!(matches!(
            manova_one_way(&obs, &groups),
            Err(AnalyticsError::SingularError)
        ));
    }

    #[test]
    fn too_few_observations() {
        let obs = vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 3.0], vec![4.0, 0.0]];
        assert!(matches!(
            manova_one_way(&obs, &[0, 0, 1, 1]),
            Err(AnalyticsError::InsufficientData(_))
        ));
    }
}
