use chemtext_core::metrics::{auc, macro_auc, mae, pearson, rmse};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Probability that a random positive outscores a random negative, ties
/// counted half, by enumerating every pair.
fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

#[test]
fn auc_matches_pairwise_oracle_on_random_instances() {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 1000 {
        let n = r.gen_range(2..=200);
        // a coarse score grid forces plenty of ties
        let levels = r.gen_range(2..50);
        let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0..levels) as f64 / levels as f64).collect();
        let p = r.gen_range(0.05..0.95);
        let labels: Vec<bool> = (0..n).map(|_| r.gen_bool(p)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            assert!(auc(&scores, &labels).is_err());
            continue;
        }
        let got = auc(&scores, &labels).unwrap();
        let want = pairwise_auc(&scores, &labels);
        assert!((got - want).abs() < 1e-12, "n={n}: {got} vs {want}");
        checked += 1;
    }
}

#[test]
fn macro_auc_skips_single_class_tasks() {
    // rows are molecules, columns tasks; task 1 only has positives
    let scores = [0.1, 0.9, 0.2, 0.8, 0.5, 0.7, 0.3, 0.6];
    let labels = [Some(false), Some(true), Some(true), Some(true), None, Some(true), Some(false), None];
    let (m, used) = macro_auc(&scores, &labels, 2).unwrap();
    assert_eq!(used, 1);
    let t0_scores = [0.1, 0.2, 0.3];
    let t0_labels = [false, true, false];
    assert!((m - pairwise_auc(&t0_scores, &t0_labels)).abs() < 1e-15);
}

fn direct_rmse(p: &[f64], t: &[f64]) -> f64 {
    (p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64).sqrt()
}

fn direct_mae(p: &[f64], t: &[f64]) -> f64 {
    p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64
}

fn direct_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn regression_metrics_match_direct_formulas(
        pairs in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..200)
    ) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!((rmse(&p, &t).unwrap() - direct_rmse(&p, &t)).abs() < 1e-12);
        prop_assert!((mae(&p, &t).unwrap() - direct_mae(&p, &t)).abs() < 1e-12);
        if let Ok(r) = pearson(&p, &t) {
            prop_assert!((r - direct_pearson(&p, &t)).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms(
        pairs in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 2..100)
    ) {
        let (s, l): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
        let squashed: Vec<f64> = s.iter().map(|v| (3.0 * v).exp()).collect();
        prop_assert_eq!(auc(&s, &l).unwrap(), auc(&squashed, &l).unwrap());
        let flipped: Vec<bool> = l.iter().map(|x| !x).collect();
        prop_assert!((auc(&s, &l).unwrap() + auc(&s, &flipped).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn degenerate_inputs_are_errors() {
    assert!(rmse(&[], &[]).is_err());
    assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    assert!(pearson(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).is_err());
}
