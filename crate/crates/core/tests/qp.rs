mod common;

use common::{brute_force_objective, random_qp};
use kbmpc::qp::{kkt_residuals, solve, QpSettings, QpStatus};
use proptest::prelude::*;

#[test]
fn random_problems_meet_kkt_tolerance() {
    for seed in 0..100u64 {
        let n = 2 + (seed as usize * 7) % 39;
        let m = (seed as usize * 37) % 201;
        let qp = random_qp(seed, n, m);
        let sol = solve(&qp, &QpSettings::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Solved, "seed {seed} n {n} m {m}: {:?}", sol.kkt);
        let kkt = kkt_residuals(&qp, &sol.w, &sol.lambda);
        assert!(kkt.max() <= 1e-6, "seed {seed}: {kkt:?}");
    }
}

#[test]
fn small_problems_match_brute_force() {
    for seed in 100..160u64 {
        let n = 2 + seed as usize % 6;
        let m = 1 + seed as usize % 3;
        let qp = random_qp(seed, n, m);
        let sol = solve(&qp, &QpSettings::default(), None).unwrap();
        let oracle = brute_force_objective(&qp);
        assert!((qp.objective(&sol.w) - oracle).abs() <= 1e-6, "seed {seed}");
    }
}

#[test]
fn solves_are_bitwise_deterministic() {
    let qp = random_qp(7, 20, 80);
    let a = solve(&qp, &QpSettings::default(), None).unwrap();
    let b = solve(&qp, &QpSettings::default(), None).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn minimizer_is_scale_invariant(seed in 0u64..10_000, c in 0.01f64..100.0) {
        let qp = random_qp(seed, 8, 20);
        let a = solve(&qp, &QpSettings::default(), None).unwrap();
        let b = solve(&qp.scaled_cost(c), &QpSettings::default(), None).unwrap();
        prop_assert_eq!(a.status, QpStatus::Solved);
        prop_assert_eq!(b.status, QpStatus::Solved);
        prop_assert!((a.w - b.w).amax() <= 1e-6);
    }
}
