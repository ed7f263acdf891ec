use std::f64::consts::FRAC_PI_2;

use dml_core::metrics::{
    auc, consistency_counts, consistency_ratio, mean, mse, one_tailed_t_test, sample_variance,
    welch_statistic, Direction, DEFAULT_MAX_PAIRS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1.0 && lj == 0.0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn brute_consistency(r: &[u8], p1: &[f64], p2: &[f64]) -> (u64, u64, u64) {
    let (mut eligible, mut consistent, mut reversed) = (0, 0, 0);
    for i in 0..r.len() {
        for j in 0..r.len() {
            if r[i] > r[j] {
                eligible += 1;
                if p1[i] > p1[j] && p2[i] > p2[j] {
                    consistent += 1;
                }
                if p1[i] < p1[j] && p2[i] < p2[j] {
                    reversed += 1;
                }
            }
        }
    }
    (eligible, consistent, reversed)
}

#[test]
fn auc_examples() {
    assert_eq!(
        auc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap(),
        1.0
    );
    assert_eq!(
        auc(&[0.9, 0.8, 0.2, 0.1], &[0.0, 0.0, 1.0, 1.0]).unwrap(),
        0.0
    );
    assert_eq!(
        auc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap(),
        0.75
    );
    assert_eq!(
        auc(&[0.5; 6], &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap(),
        0.5
    );
}

#[test]
fn auc_rejects_degenerate_inputs() {
    assert!(auc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
    assert!(auc(&[0.1, 0.2], &[0.0, 0.0]).is_err());
    assert!(auc(&[0.1], &[0.0, 1.0]).is_err());
    assert!(auc(&[0.1, f64::NAN], &[0.0, 1.0]).is_err());
    assert!(auc(&[0.1, 0.2], &[0.0, 0.5]).is_err());
    assert!(auc(&[], &[]).is_err());
}

#[test]
fn mse_examples() {
    assert_eq!(mse(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0);
    assert_eq!(mse(&[2.5], &[2.5]).unwrap(), 0.0);
    assert!(mse(&[], &[]).is_err());
    assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn consistency_examples() {
    let ratings = [1, 2, 3, 4];
    let up = [0.1, 0.2, 0.3, 0.4];
    let down = [0.4, 0.3, 0.2, 0.1];
    assert_eq!(
        consistency_ratio(&ratings, &up, &up, DEFAULT_MAX_PAIRS, 0).unwrap(),
        1.0
    );
    assert_eq!(
        consistency_ratio(&ratings, &up, &down, DEFAULT_MAX_PAIRS, 0).unwrap(),
        0.0
    );
    let counts = consistency_counts(&ratings, &down, &down, DEFAULT_MAX_PAIRS, 0).unwrap();
    assert_eq!(
        (counts.evaluated, counts.consistent, counts.reversed),
        (6, 0, 6)
    );
    assert_eq!(counts.reversed_ratio(), 1.0);

    // Equal ratings are skipped, equal predictions never agree.
    let ratings = [1, 1, 5];
    let p = [0.2, 0.7, 0.7];
    let counts = consistency_counts(&ratings, &p, &[0.0, 0.0, 1.0], DEFAULT_MAX_PAIRS, 0).unwrap();
    assert_eq!(counts.eligible, 2);
    assert_eq!(counts.consistent, 1);
    assert_eq!(counts.ratio(), 0.5);
}

#[test]
fn consistency_rejects_degenerate_inputs() {
    assert!(consistency_ratio(&[3, 3, 3], &[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3], 10, 0).is_err());
    assert!(consistency_ratio(&[1, 2], &[0.1], &[0.1, 0.2], 10, 0).is_err());
    assert!(consistency_ratio(&[1, 2], &[0.1, f64::INFINITY], &[0.1, 0.2], 10, 0).is_err());
    assert!(consistency_ratio(&[1, 2], &[0.1, 0.2], &[0.1, 0.2], 0, 0).is_err());
}

#[test]
fn sampled_consistency_tracks_exhaustive_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 2000;
    let ratings: Vec<u8> = (0..n).map(|_| rng.random_range(1..=5)).collect();
    let p1: Vec<f64> = ratings
        .iter()
        .map(|&r| f64::from(r) + rng.random_range(-2.0..2.0))
        .collect();
    let p2: Vec<f64> = ratings
        .iter()
        .map(|&r| f64::from(r) + rng.random_range(-2.0..2.0))
        .collect();
    let exact = consistency_counts(&ratings, &p1, &p2, u64::MAX, 0).unwrap();
    assert_eq!(exact.evaluated, exact.eligible);
    let sampled = consistency_counts(&ratings, &p1, &p2, DEFAULT_MAX_PAIRS, 3).unwrap();
    assert_eq!(sampled.evaluated, DEFAULT_MAX_PAIRS);
    assert!(exact.eligible > DEFAULT_MAX_PAIRS);
    assert!((sampled.ratio() - exact.ratio()).abs() < 0.01);
    let again = consistency_counts(&ratings, &p1, &p2, DEFAULT_MAX_PAIRS, 3).unwrap();
    assert_eq!(sampled, again);
}

fn coarse(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u8..12).prop_map(|v| f64::from(v) / 11.0), n)
}

fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..60)
        .prop_flat_map(|n| (coarse(n), prop::collection::vec(prop::bool::ANY, n)))
        .prop_filter("both classes", |(_, l)| {
            l.iter().any(|&b| b) && l.iter().any(|&b| !b)
        })
        .prop_map(|(s, l)| (s, l.into_iter().map(|b| f64::from(u8::from(b))).collect()))
}

fn rated() -> impl Strategy<Value = (Vec<u8>, Vec<f64>, Vec<f64>)> {
    (2usize..50)
        .prop_flat_map(|n| (prop::collection::vec(1u8..=5, n), coarse(n), coarse(n)))
        .prop_filter("two ratings", |(r, _, _)| r.iter().any(|&x| x != r[0]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn auc_matches_pairwise_count((scores, labels) in labelled()) {
        prop_assert_eq!(auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
    }

    #[test]
    fn auc_is_invariant_under_monotone_maps((scores, labels) in labelled()) {
        let a = auc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auc(&mapped, &labels).unwrap(), a);
    }

    #[test]
    fn auc_of_flipped_labels_complements((scores, labels) in labelled()) {
        let flipped: Vec<f64> = labels.iter().map(|l| 1.0 - l).collect();
        let sum = auc(&scores, &labels).unwrap() + auc(&scores, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn mse_is_translation_invariant(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40),
        shift in -10.0f64..10.0,
    ) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = mse(&p, &t).unwrap();
        prop_assert!(m >= 0.0);
        let ps: Vec<f64> = p.iter().map(|v| v + shift).collect();
        let ts: Vec<f64> = t.iter().map(|v| v + shift).collect();
        prop_assert!((mse(&ps, &ts).unwrap() - m).abs() <= 1e-9 * (1.0 + m));
    }

    #[test]
    fn consistency_matches_pairwise_count((r, p1, p2) in rated()) {
        let c = consistency_counts(&r, &p1, &p2, DEFAULT_MAX_PAIRS, 0).unwrap();
        let (eligible, consistent, reversed) = brute_consistency(&r, &p1, &p2);
        prop_assert_eq!((c.eligible, c.evaluated, c.consistent, c.reversed), (eligible, eligible, consistent, reversed));
    }

    #[test]
    fn consistency_is_invariant_under_monotone_maps((r, p1, p2) in rated()) {
        let c = consistency_ratio(&r, &p1, &p2, DEFAULT_MAX_PAIRS, 0).unwrap();
        let m1: Vec<f64> = p1.iter().map(|v| 2.0 * v + 1.0).collect();
        let m2: Vec<f64> = p2.iter().map(|v| v.powi(3)).collect();
        prop_assert_eq!(consistency_ratio(&r, &m1, &m2, DEFAULT_MAX_PAIRS, 0).unwrap(), c);
        prop_assert_eq!(consistency_ratio(&r, &p2, &p1, DEFAULT_MAX_PAIRS, 0).unwrap(), c);
    }

    #[test]
    fn negated_predictions_swap_consistent_and_reversed((r, p1, p2) in rated()) {
        let c = consistency_counts(&r, &p1, &p2, DEFAULT_MAX_PAIRS, 0).unwrap();
        let n1: Vec<f64> = p1.iter().map(|v| -v).collect();
        let n2: Vec<f64> = p2.iter().map(|v| -v).collect();
        let d = consistency_counts(&r, &n1, &n2, DEFAULT_MAX_PAIRS, 0).unwrap();
        prop_assert_eq!((c.consistent, c.reversed), (d.reversed, d.consistent));
    }
}

/// Upper tail of Student's t by Simpson's rule under `x = tan θ`.
fn t_sf(t: f64, df: f64) -> f64 {
    let h = |theta: f64| {
        let x = theta.tan();
        (1.0 + x * x / df).powf(-(df + 1.0) / 2.0) / theta.cos().powi(2)
    };
    let simpson = |a: f64, b: f64| {
        let n = 200_000;
        let w = (b - a) / n as f64;
        let inner: f64 = (1..n)
            .map(|i| h(a + i as f64 * w) * if i % 2 == 1 { 4.0 } else { 2.0 })
            .sum();
        (h(a) + h(b) + inner) * w / 3.0
    };
    let edge = FRAC_PI_2 - 1e-9;
    simpson(t.atan(), edge) / simpson(-edge, edge)
}

#[test]
fn welch_statistic_matches_hand_formula() {
    let base = [0.80, 0.81, 0.79, 0.80, 0.82];
    let treat = [0.82, 0.83, 0.81, 0.84, 0.82];
    assert!((mean(&base) - 0.804).abs() < 1e-12);
    assert!((sample_variance(&base) - 0.00013).abs() < 1e-12);
    let (vb, vt): (f64, f64) = (0.00013 / 5.0, 0.00013 / 5.0);
    let (t, df) = welch_statistic(&base, &treat);
    assert!((t - 0.02 / (vb + vt).sqrt()).abs() < 1e-9);
    assert!((df - 8.0).abs() < 1e-9);
}

#[test]
fn one_tailed_p_value_matches_numerical_integration() {
    let base = [0.80, 0.81, 0.79, 0.80, 0.82];
    let treat = [0.815, 0.80, 0.81, 0.83, 0.82];
    let (t, df) = welch_statistic(&base, &treat);
    let greater = one_tailed_t_test(&base, &treat, Direction::Greater).unwrap();
    let less = one_tailed_t_test(&base, &treat, Direction::Less).unwrap();
    assert!(
        (greater - t_sf(t, df)).abs() < 1e-6,
        "{greater} vs {}",
        t_sf(t, df)
    );
    assert!((greater + less - 1.0).abs() < 1e-12);
}

#[test]
fn t_test_edge_cases() {
    let a = [0.7, 0.72, 0.71];
    assert!((one_tailed_t_test(&a, &a, Direction::Greater).unwrap() - 0.5).abs() < 1e-12);
    let high = [0.9, 0.91, 0.905];
    assert!(one_tailed_t_test(&a, &high, Direction::Greater).unwrap() < 1e-3);
    assert!(one_tailed_t_test(&a, &high, Direction::Less).unwrap() > 0.999);
    let flat = [0.5, 0.5];
    assert_eq!(
        one_tailed_t_test(&flat, &flat, Direction::Greater).unwrap(),
        0.5
    );
    assert_eq!(
        one_tailed_t_test(&flat, &[0.6, 0.6], Direction::Greater).unwrap(),
        0.0
    );
    assert_eq!(
        one_tailed_t_test(&flat, &[0.6, 0.6], Direction::Less).unwrap(),
        1.0
    );
    assert!(one_tailed_t_test(&[0.5], &a, Direction::Greater).is_err());
    assert!(one_tailed_t_test(&[0.5, f64::NAN], &a, Direction::Greater).is_err());
    assert_eq!("less".parse::<Direction>().unwrap(), Direction::Less);
    assert!("sideways".parse::<Direction>().is_err());
}
