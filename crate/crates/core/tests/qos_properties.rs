mod common;

use proptest::prelude::*;

use qosim_core::qos::{aggregate_criterion, entity_qos, evaluate_hierarchy, mark_characteristic, WishFunction};
use qosim_core::CriterionMarks;

fn breakpoints() -> impl Strategy<Value = Vec<(f64, f64)>> {
    (2usize..6).prop_flat_map(|k| {
        (prop::collection::vec(0.1f64..50.0, k), prop::collection::vec(0.0f64..=1.0, k)).prop_map(|(gaps, marks)| {
            let mut x = -20.0;
            gaps.iter()
                .zip(marks)
                .map(|(g, m)| {
                    x += g;
                    (x, m)
                })
                .collect()
        })
    })
}

fn weighted() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..=1.0, 0.01f64..10.0), 1..12)
}

proptest! {
    #[test]
    fn marks_stay_in_unit_interval(bp in breakpoints(), x in -100.0f64..300.0) {
        let w = WishFunction::new("c", bp, 1.0);
        let m = mark_characteristic(x, &w);
        prop_assert!((0.0..=1.0).contains(&m));
    }

    #[test]
    fn marks_hit_breakpoints(bp in breakpoints()) {
        let w = WishFunction::new("c", bp.clone(), 1.0);
        for (v, m) in bp {
            prop_assert!((mark_characteristic(v, &w) - m).abs() <= 1e-9);
        }
    }

    #[test]
    fn nondecreasing_wishes_give_monotone_marks(mut marks in prop::collection::vec(0.0f64..=1.0, 2..6), a in -10.0f64..60.0, b in -10.0f64..60.0) {
        marks.sort_by(f64::total_cmp);
        let bp: Vec<(f64, f64)> = marks.iter().enumerate().map(|(i, &m)| (10.0 * i as f64, m)).collect();
        let w = WishFunction::new("c", bp, 1.0);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(mark_characteristic(lo, &w) <= mark_characteristic(hi, &w) + 1e-12);
    }

    #[test]
    fn mean_within_input_bounds(ms in weighted()) {
        let m = aggregate_criterion(&ms).unwrap();
        let lo = ms.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
        let hi = ms.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= m && m <= hi);
    }

    #[test]
    fn mean_is_scale_invariant(ms in weighted(), k in 0.01f64..100.0) {
        let scaled: Vec<(f64, f64)> = ms.iter().map(|&(m, w)| (m, w * k)).collect();
        let a = aggregate_criterion(&ms).unwrap();
        let b = aggregate_criterion(&scaled).unwrap();
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn equal_weights_give_arithmetic_mean(marks in prop::collection::vec(0.0f64..=1.0, 1..10)) {
        let ms: Vec<(f64, f64)> = marks.iter().map(|&m| (m, 1.0)).collect();
        let mean = marks.iter().sum::<f64>() / marks.len() as f64;
        prop_assert!((aggregate_criterion(&ms).unwrap() - mean).abs() <= 1e-9);
    }

    #[test]
    fn min_rule_is_exact(i in 0.0f64..=1.0, c in 0.0f64..=1.0) {
        prop_assert_eq!(entity_qos(CriterionMarks::new(i, c)), i.min(c));
    }

    #[test]
    fn hierarchy_matches_leaf_expansion(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let (app, user, marks) = common::random_tree(&mut r);
        let report = evaluate_hierarchy(&app, &marks, &user).unwrap();
        let (i, c) = common::oracle_marks(&app, &user, &marks);
        prop_assert!((report.application.intrinsic - i).abs() <= 1e-9);
        prop_assert!((report.application.contextual - c).abs() <= 1e-9);
        prop_assert!((report.overall - i.min(c)).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&report.overall));
    }

    #[test]
    fn raising_one_mark_never_lowers_the_overall(seed in any::<u64>(), bump in 0.0f64..=1.0) {
        let mut r = common::rng(seed);
        let (app, user, marks) = common::random_tree(&mut r);
        let Some(key) = marks.keys().next().cloned() else { return Ok(()); };
        let before = evaluate_hierarchy(&app, &marks, &user).unwrap().overall;
        let mut raised = marks.clone();
        let m = raised.get_mut(&key).unwrap();
        *m = (*m + bump).min(1.0);
        let after = evaluate_hierarchy(&app, &raised, &user).unwrap().overall;
        prop_assert!(after + 1e-12 >= before);
    }
}

#[test]
fn zero_weights_are_rejected() {
    assert!(aggregate_criterion(&[(0.5, 0.0), (0.7, 0.0)]).is_err());
}
