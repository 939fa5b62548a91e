use esdfm_core::protocol::{auc, pr_auc, relative_metric, Orientation};
use proptest::prelude::*;

/// Pair counting straight from the definition.
fn brute_auc(s: &[f64], y: &[u8]) -> Option<f64> {
    let (mut twice, mut np, mut nn) = (0u64, 0u64, 0u64);
    for i in 0..s.len() {
        if y[i] == 1 {
            np += 1;
        } else {
            nn += 1;
        }
    }
    if np == 0 || nn == 0 {
        return None;
    }
    for i in (0..s.len()).filter(|&i| y[i] == 1) {
        for j in (0..s.len()).filter(|&j| y[j] == 0) {
            twice += if s[i] > s[j] {
                2
            } else if s[i] == s[j] {
                1
            } else {
                0
            };
        }
    }
    Some(twice as f64 / (2 * np * nn) as f64)
}

/// Rank of each positive counted directly: items scored higher, plus equal
/// items at or before it in input order.
fn brute_ap(s: &[f64], y: &[u8]) -> Option<f64> {
    let positives: Vec<usize> = (0..s.len()).filter(|&i| y[i] == 1).collect();
    if positives.is_empty() {
        return None;
    }
    let ahead = |i: usize, j: usize| s[j] > s[i] || (s[j] == s[i] && j <= i);
    let sum: f64 = positives
        .iter()
        .map(|&i| {
            let rank = (0..s.len()).filter(|&j| ahead(i, j)).count();
            let tp = positives.iter().filter(|&&j| ahead(i, j)).count();
            tp as f64 / rank as f64
        })
        .sum();
    Some(sum / positives.len() as f64)
}

fn scored_set() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    // a coarse score grid forces plenty of ties
    (1usize..=8).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..6).prop_map(|v| f64::from(v) / 5.0), n),
            prop::collection::vec(0u8..=1, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4000))]

    #[test]
    fn auc_matches_pair_enumeration((s, y) in scored_set()) {
        match brute_auc(&s, &y) {
            Some(b) => prop_assert_eq!(auc(&s, &y).unwrap(), b),
            None => prop_assert!(auc(&s, &y).is_err()),
        }
    }

    #[test]
    fn pr_auc_matches_rank_enumeration((s, y) in scored_set()) {
        match brute_ap(&s, &y) {
            Some(b) => prop_assert!((pr_auc(&s, &y).unwrap() - b).abs() < 1e-12),
            None => prop_assert!(pr_auc(&s, &y).is_err()),
        }
    }

    #[test]
    fn auc_ignores_strictly_increasing_transforms(
        s in prop::collection::vec(-5.0f64..5.0, 2..60),
        y in prop::collection::vec(0u8..=1, 60),
    ) {
        let y = &y[..s.len()];
        let t: Vec<f64> = s.iter().map(|v| 3.0 * v.exp() + v.powi(3) - 7.0).collect();
        match (auc(&s, y), auc(&t, y)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert!(a.is_err() && b.is_err()),
        }
    }

    #[test]
    fn relative_metric_anchors(v in -10.0f64..10.0, o in -10.0f64..10.0) {
        prop_assume!(v != o);
        for orientation in [Orientation::HigherIsBetter, Orientation::LowerIsBetter] {
            prop_assert_eq!(relative_metric(v, v, o, orientation).unwrap(), 0.0);
            prop_assert_eq!(relative_metric(o, v, o, orientation).unwrap(), 1.0);
        }
    }
}
