//! AUROC and FPR@TPR against brute-force reference implementations.

use oodkit_core::metrics::{auroc, evaluate, fpr_at_tpr};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Every (id, ood) pair, ties counted one half.
fn auroc_pairs(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &x in id {
        for &y in ood {
            wins += if x > y {
                1.0
            } else if x == y {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (id.len() * ood.len()) as f64
}

/// Tries every ID score as a threshold and keeps the largest that reaches
/// the TPR target.
fn fpr_scan(id: &[f64], ood: &[f64], target: f64) -> (f64, f64) {
    let mut best: Option<f64> = None;
    for &lambda in id {
        let tp = id.iter().filter(|&&x| x >= lambda).count();
        if tp as f64 / id.len() as f64 >= target && best.is_none_or(|b| lambda > b) {
            best = Some(lambda);
        }
    }
    let lambda = best.expect("the smallest ID score always reaches TPR 1");
    let fp = ood.iter().filter(|&&y| y >= lambda).count();
    (fp as f64 / ood.len() as f64, lambda)
}

fn sample(rng: &mut Xoshiro256PlusPlus, n: usize, coarse: bool, shift: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            if coarse {
                // a handful of distinct values forces heavy ties
                (u * 6.0).floor() + shift.round()
            } else {
                u + shift
            }
        })
        .collect()
}

#[test]
fn random_instances_match_brute_force() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
    for case in 0..1000 {
        let n_id = 1 + (rng.next_u64() % 200) as usize;
        let n_ood = 1 + (rng.next_u64() % 200) as usize;
        let coarse = case % 3 == 0;
        let id = sample(&mut rng, n_id, coarse, 0.3);
        let ood = sample(&mut rng, n_ood, coarse, 0.0);
        let a = auroc(&id, &ood).unwrap();
        assert!((a - auroc_pairs(&id, &ood)).abs() <= 1e-12, "case {case}");
        for target in [0.95, 0.5, 1.0, 0.8 + 0.001 * (case % 100) as f64] {
            assert_eq!(fpr_at_tpr(&id, &ood, target).unwrap(), fpr_scan(&id, &ood, target), "case {case} target {target}");
        }
    }
}

#[test]
fn evaluate_agrees_with_parts() {
    let id = [0.9, 0.1, 0.5, 0.5, 0.7];
    let ood = [0.5, 0.2, 0.0];
    let r = evaluate(&id, &ood, 0.95).unwrap();
    assert_eq!(r.auroc, auroc_pairs(&id, &ood));
    assert_eq!((r.fpr95, r.threshold_at_tpr95), fpr_scan(&id, &ood, 0.95));
}
