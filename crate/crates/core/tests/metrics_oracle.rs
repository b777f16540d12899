//! Confusion-matrix metrics against a naive pair-by-pair counter.

use proptest::prelude::*;
use rampcast::evaluation::{confusion, f1_score, score};
use rampcast::labeling::RampClass;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Naive {
    accuracy: f64,
    f1: Vec<f64>,
}

/// F1 as `2 tp / (2 tp + fp + fn)`, counted directly from the label pairs.
fn naive(truth: &[usize], pred: &[usize], c: usize) -> Naive {
    let correct = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    let f1 = (1..=c)
        .map(|k| {
            let mut tp = 0;
            let mut fp = 0;
            let mut fn_ = 0;
            for (&a, &b) in truth.iter().zip(pred) {
                match (a == k, b == k) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    _ => {}
                }
            }
            if tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            }
        })
        .collect();
    Naive { accuracy: correct as f64 / truth.len() as f64, f1 }
}

fn classes(ids: &[usize]) -> Vec<RampClass> {
    ids.iter().map(|&i| RampClass::new(i)).collect()
}

#[test]
fn agrees_with_naive_counter_on_200_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let c = rng.gen_range(2..=6);
        let n = rng.gen_range(1..=300);
        // Skewed draws so some classes are rare or absent.
        let draw = |rng: &mut ChaCha8Rng| ((rng.gen_range(0.0f64..1.0).powi(2) * c as f64) as usize).min(c - 1) + 1;
        let truth: Vec<usize> = (0..n).map(|_| draw(&mut rng)).collect();
        let pred: Vec<usize> = (0..n).map(|_| draw(&mut rng)).collect();
        let rare = classes(&[1, c]);
        let r = score(&classes(&truth), &classes(&pred), c, &rare).unwrap();
        let want = naive(&truth, &pred, c);
        assert!((r.accuracy - want.accuracy).abs() <= 1e-12);
        for (m, f) in r.per_class.iter().zip(&want.f1) {
            assert!((m.f1 - f).abs() <= 1e-12, "{} vs {f}", m.f1);
        }
        let macro_f1 = want.f1.iter().sum::<f64>() / c as f64;
        assert!((r.overall_f1 - macro_f1).abs() <= 1e-12);
        let rare_f1 = (want.f1[0] + want.f1[c - 1]) / 2.0;
        assert!((r.rare_f1 - rare_f1).abs() <= 1e-12);
    }
}

#[test]
fn two_thirds_case_is_exact() {
    // Class 1: tp = 2, fp = 1, fn = 1.
    let truth = classes(&[1, 1, 1, 2, 2]);
    let pred = classes(&[1, 1, 2, 1, 2]);
    let cm = confusion(&truth, &pred, 2).unwrap();
    let one = RampClass::new(1);
    assert_eq!((cm.true_positives(one), cm.false_positives(one), cm.false_negatives(one)), (2, 1, 1));
    let r = score(&truth, &pred, 2, &[one]).unwrap();
    assert_eq!(r.per_class[0].f1, 2.0 / 3.0);
    assert_eq!(f1_score(2.0 / 3.0, 2.0 / 3.0), 2.0 / 3.0);
}

#[test]
fn absent_class_scores_zero() {
    let r = score(&classes(&[1, 2]), &classes(&[1, 2]), 4, &classes(&[1, 4])).unwrap();
    assert_eq!(r.per_class[3].f1, 0.0);
    assert_eq!(r.rare_f1, 0.5);
    assert_eq!(r.overall_f1, 0.5);
}

#[test]
fn mismatched_lengths_are_rejected() {
    assert!(score(&classes(&[1, 2]), &classes(&[1]), 2, &[]).is_err());
    assert!(score(&classes(&[1, 5]), &classes(&[1, 1]), 4, &[]).is_err());
}

proptest! {
    #[test]
    fn macro_f1_is_permutation_invariant(
        pairs in prop::collection::vec((1usize..=4, 1usize..=4), 1..200),
        seed in any::<u64>(),
    ) {
        let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut ChaCha8Rng::seed_from_u64(seed));
        let a = score(&classes(&truth), &classes(&pred), 4, &classes(&[1, 4])).unwrap();
        let t2: Vec<usize> = order.iter().map(|&i| truth[i]).collect();
        let p2: Vec<usize> = order.iter().map(|&i| pred[i]).collect();
        let b = score(&classes(&t2), &classes(&p2), 4, &classes(&[1, 4])).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn metrics_lie_in_unit_interval(pairs in prop::collection::vec((1usize..=4, 1usize..=4), 1..100)) {
        let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let r = score(&classes(&truth), &classes(&pred), 4, &classes(&[1, 4])).unwrap();
        for v in [r.accuracy, r.overall_f1, r.rare_f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let perfect = score(&classes(&truth), &classes(&truth), 4, &[]).unwrap();
        prop_assert_eq!(perfect.accuracy, 1.0);
    }
}
