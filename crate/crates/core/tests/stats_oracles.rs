//! Independent oracles for the ANOVA / MANOVA / post-hoc routines.

use copilot_core::analytics::{
    cohen_d, levene_test, manova_one_way, one_way_anova, pairwise_bonferroni, pooled_t, split_achievement,
    two_way_anova_type2, AchievementLevel,
};
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Sums of squares straight from their definitions.
fn definitional_f(groups: &[Vec<f64>]) -> (f64, f64, f64) {
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand: f64 = groups.iter().flatten().sum::<f64>() / n as f64;
    let sst: f64 = groups.iter().flatten().map(|x| (x - grand).powi(2)).sum();
    let ssw: f64 = groups
        .iter()
        .map(|g| {
            let m = g.iter().sum::<f64>() / g.len() as f64;
            g.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        })
        .sum();
    let ssb = sst - ssw;
    let k = groups.len();
    let f = (ssb / (k - 1) as f64) / (ssw / (n - k) as f64);
    (f, ssb, ssw)
}

fn pooled_t_oracle(a: &[f64], b: &[f64]) -> f64 {
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (a.len() - 1) as f64;
    let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (b.len() - 1) as f64;
    let sp2 = ((a.len() - 1) as f64 * va + (b.len() - 1) as f64 * vb) / (a.len() + b.len() - 2) as f64;
    (ma - mb) / (sp2 * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt()
}

fn group() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, 3..9)
}

fn groups(min: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(group(), min..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn f_matches_definitional_sums(gs in groups(2, 5)) {
        let r = one_way_anova(&gs).unwrap();
        let (f, ssb, ssw) = definitional_f(&gs);
        prop_assert!(close(r.f_value, f, 1e-9), "{} vs {}", r.f_value, f);
        prop_assert!(close(r.ss_effect, ssb, 1e-9));
        prop_assert!(close(r.ss_residual, ssw, 1e-9));
        prop_assert!(close(r.eta2_partial, ssb / (ssb + ssw), 1e-9));
        let n: usize = gs.iter().map(Vec::len).sum();
        prop_assert_eq!((r.df_between, r.df_within), (gs.len() - 1, n - gs.len()));
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        prop_assert!(r.f_value >= 0.0 && (0.0..=1.0).contains(&r.eta2_partial));
    }

    #[test]
    fn two_group_f_is_t_squared(a in group(), b in group()) {
        let r = one_way_anova(&[a.clone(), b.clone()]).unwrap();
        let t = pooled_t_oracle(&a, &b);
        prop_assert!(close(r.f_value, t * t, 1e-9));
        let (t_impl, df) = pooled_t(&a, &b).unwrap();
        prop_assert!(close(t_impl, t, 1e-9));
        prop_assert_eq!(df, a.len() + b.len() - 2);
        let pw = pairwise_bonferroni(&[("a", &a[..]), ("b", &b[..])]).unwrap();
        prop_assert!(close(pw[0].p_raw, r.p_value, 1e-9));
    }

    #[test]
    fn manova_single_dv_reduces_to_anova(gs in groups(2, 4)) {
        let r = one_way_anova(&gs).unwrap();
        let obs: Vec<Vec<f64>> = gs.iter().flatten().map(|&x| vec![x]).collect();
        let labels: Vec<usize> = gs.iter().enumerate().flat_map(|(i, g)| std::iter::repeat_n(i, g.len())).collect();
        let m = manova_one_way(&obs, &labels).unwrap();
        prop_assert!(close(m.approx_f, r.f_value, 1e-9), "{} vs {}", m.approx_f, r.f_value);
        prop_assert!(close(m.df1, r.df_between as f64, 1e-12));
        prop_assert!(close(m.df2, r.df_within as f64, 1e-12));
        prop_assert!(close(m.p_value, r.p_value, 1e-9));
        prop_assert!(close(m.wilks, r.ss_residual / (r.ss_effect + r.ss_residual), 1e-9));
    }

    #[test]
    fn two_group_pillai_plus_wilks_is_one(
        p in 1usize..4,
        na in 5usize..10,
        nb in 5usize..10,
        seed in prop::collection::vec(-20.0..20.0f64, 80),
    ) {
        let n = na + nb;
        let obs: Vec<Vec<f64>> = (0..n).map(|i| (0..p).map(|j| seed[(i * p + j) % seed.len()] + (i * j) as f64 * 0.37).collect()).collect();
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i >= na)).collect();
        let m = manova_one_way(&obs, &labels).unwrap();
        prop_assert!(close(m.pillai + m.wilks, 1.0, 1e-9));
        prop_assert!(m.wilks > 0.0 && m.wilks <= 1.0 + 1e-12);
        prop_assert!(m.pillai >= 0.0 && m.hotelling >= 0.0 && m.roy >= 0.0);
        for a in &m.approximations {
            prop_assert!((0.0..=1.0).contains(&a.p_value));
        }
    }

    #[test]
    fn balanced_type2_equals_type1(
        la in 2usize..4,
        lb in 2usize..4,
        reps in 2usize..4,
        raw in prop::collection::vec(-30.0..30.0f64, 36),
    ) {
        let mut values = Vec::new();
        let mut fa = Vec::new();
        let mut fb = Vec::new();
        for i in 0..la {
            for j in 0..lb {
                for r in 0..reps {
                    values.push(raw[(i * lb * reps + j * reps + r) % raw.len()] + i as f64 * 3.0 - j as f64);
                    fa.push(i);
                    fb.push(j);
                }
            }
        }
        let r = two_way_anova_type2(&values, &fa, &fb, true).unwrap();
        // Type I on balanced data: marginal-mean sums of squares
        let n = values.len() as f64;
        let grand = values.iter().sum::<f64>() / n;
        let marg = |labels: &[usize], levels: usize| -> f64 {
            (0..levels)
                .map(|l| {
                    let xs: Vec<f64> = values.iter().zip(labels).filter(|(_, &g)| g == l).map(|(v, _)| *v).collect();
                    let m = xs.iter().sum::<f64>() / xs.len() as f64;
                    xs.len() as f64 * (m - grand).powi(2)
                })
                .sum()
        };
        let ssa = marg(&fa, la);
        let ssb = marg(&fb, lb);
        let mut ss_cells = 0.0;
        let mut ss_within = 0.0;
        for i in 0..la {
            for j in 0..lb {
                let xs: Vec<f64> = (0..values.len()).filter(|&k| fa[k] == i && fb[k] == j).map(|k| values[k]).collect();
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                ss_cells += xs.len() as f64 * (m - grand).powi(2);
                ss_within += xs.iter().map(|x| (x - m).powi(2)).sum::<f64>();
            }
        }
        let ssab = ss_cells - ssa - ssb;
        prop_assert!(close(r.factor_a.ss_effect, ssa, 1e-9), "{} vs {}", r.factor_a.ss_effect, ssa);
        prop_assert!(close(r.factor_b.ss_effect, ssb, 1e-9));
        let inter = r.interaction.unwrap();
        prop_assert!((inter.ss_effect - ssab).abs() <= 1e-9 * (1.0 + ss_cells));
        prop_assert!(close(r.factor_a.ss_residual, ss_within, 1e-9));
        prop_assert_eq!(r.factor_a.df_within, values.len() - la * lb);
    }

    #[test]
    fn shift_and_scale_invariance(gs in groups(2, 4), c in -100.0..100.0f64, k in prop::sample::select(vec![-3.5, 0.25, 2.0, 17.0])) {
        let base = one_way_anova(&gs).unwrap();
        let shifted: Vec<Vec<f64>> = gs.iter().map(|g| g.iter().map(|x| x + c).collect()).collect();
        let scaled: Vec<Vec<f64>> = gs.iter().map(|g| g.iter().map(|x| x * k).collect()).collect();
        for other in [&shifted, &scaled] {
            let r = one_way_anova(other).unwrap();
            prop_assert!(close(r.f_value, base.f_value, 1e-7));
            prop_assert!(close(r.eta2_partial, base.eta2_partial, 1e-7));
        }
        let d0 = cohen_d(&gs[0], &gs[1]).unwrap();
        let d_shift = cohen_d(&shifted[0], &shifted[1]).unwrap();
        let d_scale = cohen_d(&scaled[0], &scaled[1]).unwrap();
        prop_assert!(close(d_shift, d0, 1e-7));
        prop_assert!(close(d_scale, d0 * k.signum(), 1e-7));
    }

    #[test]
    fn manova_shift_invariance(c in -50.0..50.0f64, raw in prop::collection::vec(-10.0..10.0f64, 30)) {
        let obs: Vec<Vec<f64>> = raw.chunks(2).map(|r| r.to_vec()).collect();
        let labels: Vec<usize> = (0..obs.len()).map(|i| i % 3).collect();
        let a = manova_one_way(&obs, &labels).unwrap();
        let moved: Vec<Vec<f64>> = obs.iter().map(|r| r.iter().map(|x| x + c).collect()).collect();
        let b = manova_one_way(&moved, &labels).unwrap();
        prop_assert!(close(a.pillai, b.pillai, 1e-7));
        prop_assert!(close(a.wilks, b.wilks, 1e-7));
        prop_assert!(close(a.hotelling, b.hotelling, 1e-7));
        prop_assert!(close(a.roy, b.roy, 1e-7));
    }

    #[test]
    fn anova_ignores_relabeling_and_order(mut gs in groups(2, 4), rot in 0usize..4) {
        let a = one_way_anova(&gs).unwrap();
        let len = gs.len();
        gs.rotate_left(rot % len);
        for g in gs.iter_mut() {
            g.reverse();
        }
        let b = one_way_anova(&gs).unwrap();
        prop_assert!(close(a.f_value, b.f_value, 1e-9));
    }

    #[test]
    fn achievement_split_partitions_monotonically(grades in prop::collection::vec(0.0..100.0f64, 3..40)) {
        let input: Vec<(String, f64)> = grades.iter().enumerate().map(|(i, g)| (format!("s{i}"), *g)).collect();
        let split = split_achievement(&input).unwrap();
        prop_assert_eq!(split.levels.len(), input.len());
        for (ia, ga) in &input {
            for (ib, gb) in &input {
                if ga > gb {
                    prop_assert!(split.levels[ia] >= split.levels[ib]);
                }
            }
        }
        prop_assert!(split.p33 <= split.p66);
    }

    #[test]
    fn levene_is_anova_of_absolute_deviations(gs in groups(2, 4)) {
        let dev: Vec<Vec<f64>> = gs
            .iter()
            .map(|g| {
                let m = g.iter().sum::<f64>() / g.len() as f64;
                g.iter().map(|x| (x - m).abs()).collect()
            })
            .collect();
        let (f, _, _) = definitional_f(&dev);
        let r = levene_test(&gs).unwrap();
        prop_assert!(close(r.f_value, f, 1e-9));
    }
}

#[test]
fn worked_example() {
    let g: [Vec<f64>; 2] = [vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
    let r = one_way_anova(&g).unwrap();
    assert_eq!(r.f_value, 13.5);
    assert_eq!((r.df_between, r.df_within), (1, 4));
    assert!((r.eta2_partial - 0.7714).abs() < 1e-4);
    let d = cohen_d(&g[0], &g[1]).unwrap();
    assert!((d.abs() - 3.0).abs() < 1e-12);
    let t = pooled_t_oracle(&g[0], &g[1]);
    assert!((t.abs() - 3.6742).abs() < 1e-4);
}

#[test]
fn f32_and_f64_agree() {
    let a32 = [
        vec![1.5f32, 2.25, 3.0, 2.0],
        vec![4.0, 5.5, 6.0, 4.75],
        vec![2.0, 2.5, 3.5, 3.0],
    ];
    let a64: Vec<Vec<f64>> = a32.iter().map(|g| g.iter().map(|&x| f64::from(x)).collect()).collect();
    let r32 = one_way_anova(&a32).unwrap();
    let r64 = one_way_anova(&a64).unwrap();
    assert!((f64::from(r32.f_value) - r64.f_value).abs() < 1e-3 * r64.f_value);
    assert!((f64::from(r32.p_value) - r64.p_value).abs() < 1e-4);
}

#[test]
fn tertiles_of_one_to_nine() {
    let grades: Vec<(String, f64)> = (1..=9).map(|g| (g.to_string(), g as f64)).collect();
    let s = split_achievement(&grades).unwrap();
    let low: Vec<&String> = s
        .levels
        .iter()
        .filter(|(_, &l)| l == AchievementLevel::Low)
        .map(|(k, _)| k)
        .collect();
    assert_eq!(low, ["1", "2", "3"]);
}
