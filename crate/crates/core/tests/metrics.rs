//! Detection metrics: rank invariance and agreement with enumeration.

use got_core::metrics::{aupr, auroc, fpr_at_tpr, report, Positive, ScoreSet};
use proptest::prelude::*;

/// Scores on a coarse grid so that ties occur.
fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-20i32..20).prop_map(|x| x as f64 * 0.5), 1..40)
}

fn brute_auroc(ind: &[f64], ood: &[f64]) -> f64 {
    let mut s = 0.0;
    for o in ood {
        for i in ind {
            s += if o > i { 1.0 } else if o == i { 0.5 } else { 0.0 };
        }
    }
    s / (ind.len() * ood.len()) as f64
}

fn brute_fpr(ind: &[f64], ood: &[f64], tpr: f64) -> f64 {
    let mut best = 1.0f64;
    for &t in ind.iter().chain(ood) {
        let tp = ood.iter().filter(|&&s| s >= t).count() as f64 / ood.len() as f64;
        let fp = ind.iter().filter(|&&s| s >= t).count() as f64 / ind.len() as f64;
        if tp >= tpr {
            best = best.min(fp);
        }
    }
    best
}

/// Average precision with OOD positive, thresholds at each distinct score.
fn brute_aupr(ind: &[f64], ood: &[f64]) -> f64 {
    let mut ts: Vec<f64> = ind.iter().chain(ood).copied().collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    let mut prev = 0.0;
    let mut area = 0.0;
    for t in ts {
        let tp = ood.iter().filter(|&&s| s >= t).count() as f64;
        let fp = ind.iter().filter(|&&s| s >= t).count() as f64;
        let recall = tp / ood.len() as f64;
        if tp + fp > 0.0 {
            area += (recall - prev) * tp / (tp + fp);
        }
        prev = recall;
    }
    area
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn metrics_are_invariant_to_increasing_transforms(ind in scores(), ood in scores(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let s = ScoreSet::new(ind, ood).unwrap();
        let before = report(&s).unwrap();
        for t in [s.map(|x| a * x + b), s.map(|x| x.exp()), s.map(|x| x.powi(3) + x)] {
            let after = report(&t).unwrap();
            prop_assert_eq!(before.values(), after.values());
        }
    }

    #[test]
    fn metrics_match_enumeration(ind in scores(), ood in scores()) {
        let s = ScoreSet::new(ind.clone(), ood.clone()).unwrap();
        prop_assert!((auroc(&s).unwrap() - brute_auroc(&ind, &ood)).abs() < 1e-12);
        prop_assert!((fpr_at_tpr(&s, 0.95).unwrap() - brute_fpr(&ind, &ood, 0.95)).abs() < 1e-12);
        prop_assert!((aupr(&s, Positive::Ood).unwrap() - brute_aupr(&ind, &ood)).abs() < 1e-12);
        let neg_ind: Vec<f64> = ind.iter().map(|x| -x).collect();
        let neg_ood: Vec<f64> = ood.iter().map(|x| -x).collect();
        prop_assert!((aupr(&s, Positive::Ind).unwrap() - brute_aupr(&neg_ood, &neg_ind)).abs() < 1e-12);
    }

    #[test]
    fn swapping_roles_complements_auroc(ind in scores(), ood in scores()) {
        let a = auroc(&ScoreSet::new(ind.clone(), ood.clone()).unwrap()).unwrap();
        let b = auroc(&ScoreSet::new(ood, ind).unwrap()).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }
}

#[test]
fn perfect_and_reversed_separation() {
    let s = ScoreSet::new(vec![0.0, 1.0], vec![2.0, 3.0]).unwrap();
    let r = report(&s).unwrap();
    assert_eq!(r.values(), [1.0, 0.0, 1.0, 1.0]);
    let s = ScoreSet::new(vec![2.0, 3.0], vec![0.0, 1.0]).unwrap();
    assert_eq!(auroc(&s).unwrap(), 0.0);
    assert_eq!(fpr_at_tpr(&s, 0.95).unwrap(), 1.0);
}

#[test]
fn empty_sides_are_rejected() {
    assert!(ScoreSet::new(vec![], vec![1.0]).is_err());
    assert!(ScoreSet::new(vec![1.0], vec![]).is_err());
    assert!(ScoreSet::new(vec![f64::NAN], vec![1.0]).is_err());
}
