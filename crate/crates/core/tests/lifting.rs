use std::sync::LazyLock;

use kbmpc::lie::{Expr, ScalarField, ControlAffineSystem};
use kbmpc::lifting::{build_basis, truncation_error_bound, LiftingBasis, ProbeConfig, SamplingBox, Seed};
use kbmpc::plant::{output_map, rk4, tractor_trailer_system, Limits, PlantParams, State};
use proptest::prelude::*;

static BASIS: LazyLock<LiftingBasis> = LazyLock::new(|| {
    let sys = tractor_trailer_system(&PlantParams::default());
    let probe = ProbeConfig::new(SamplingBox::tractor_trailer_states(&Limits::default()));
    build_basis(&sys, 2, &probe).unwrap()
});

fn state() -> impl Strategy<Value = [f64; 6]> {
    (
        -10.0..10.0f64,
        -10.0..10.0f64,
        -3.2..3.2f64,
        -3.2..3.2f64,
        -0.68..0.68f64,
        -1.0..1.0f64,
    )
        .prop_map(|(a, b, c, d, e, f)| [a, b, c, d, e, f])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lifted_state_starts_with_the_outputs(x in state()) {
        let z = BASIS.eval_psi_x(&x);
        let y = output_map(&State::from_array(x), &PlantParams::default());
        prop_assert_eq!(&z.as_slice()[..8], &y.0[..]);
    }

    #[test]
    fn feature_blocks_are_input_scaled_copies(x in state(), u in prop::array::uniform2(-2.0..2.0f64)) {
        let n = BASIS.n();
        let z = BASIS.eval_psi_x(&x);
        let psi = BASIS.eval_psi(&x, &u);
        prop_assert_eq!(psi.len(), 3 * n + 2);
        for j in 0..2 {
            for i in 0..n {
                prop_assert_eq!(psi[(j + 1) * n + i], u[j] * z[i]);
            }
        }
        prop_assert_eq!(&psi.as_slice()[..n], z.as_slice());
        prop_assert_eq!(&psi.as_slice()[3 * n..], &u[..]);
    }

    #[test]
    fn raising_the_order_shrinks_the_bound_by_elapsed_over_order(
        rho in 0usize..4,
        k in 1usize..30,
        f in 0.1..10.0f64,
    ) {
        let ts = 0.05;
        let lo = truncation_error_bound(rho, k, ts, &[f])[0];
        let hi = truncation_error_bound(rho + 1, k, ts, &[f])[0];
        let ratio = k as f64 * ts / (rho + 2) as f64;
        prop_assert!((hi - lo * ratio).abs() <= 1e-12 * lo);
    }
}

#[test]
fn zero_inputs_leave_only_the_lifted_state() {
    let x = [1.0, -2.0, 0.3, 0.1, 0.2, 0.5];
    let psi = BASIS.eval_psi(&x, &[0.0, 0.0]);
    let n = BASIS.n();
    assert_eq!(&psi.as_slice()[..n], BASIS.eval_psi_x(&x).as_slice());
    assert!(psi.as_slice()[n..].iter().all(|v| *v == 0.0));
}

#[test]
fn bound_vanishes_at_step_zero() {
    assert_eq!(truncation_error_bound(2, 0, 0.05, &[3.0, 1.0]), vec![0.0, 0.0]);
}

#[test]
fn drift_chain_entry_is_the_rate_along_the_flow() {
    // level 1, path [0, 0] of the x0 chain is ∇(v cos θ0)·f; the state and
    // output chains of x0 coincide, so either copy may be the retained one
    let idx = BASIS
        .observables()
        .iter()
        .position(|o| {
            matches!(o.provenance.seed, Seed::StateChain(0) | Seed::OutputChain(0)) && o.provenance.path == [0, 0]
        })
        .expect("drift-drift chain of x0 retained");
    let sys = tractor_trailer_system(&PlantParams::default());
    let flow = |x: [f64; 6], t: f64| {
        let f = |x: &[f64; 6]| -> [f64; 6] {
            let r = sys.rhs(x, &[0.0, 0.0]);
            std::array::from_fn(|i| r[i])
        };
        let mut x = x;
        for _ in 0..100 {
            x = rk4(&x, t / 100.0, f);
        }
        x
    };
    let phi = |x: &[f64; 6]| x[5] * x[2].cos();
    let h = 1e-5;
    for x in [[0.0, 0.0, 0.4, 0.1, 0.3, 0.8], [2.0, 1.0, -2.0, -1.5, -0.6, -0.4]] {
        let fd = (phi(&flow(x, h)) - phi(&flow(x, -h))) / (2.0 * h);
        let z = BASIS.eval_psi_x(&x);
        assert!((z[idx] - fd).abs() < 1e-8, "{} vs {fd}", z[idx]);
    }
}

#[test]
fn constant_fields_leave_only_the_state() {
    // ẋ = g u with constant g, y = x: every chain is constant and pruned
    let n = 3;
    let drift = vec![ScalarField::constant(0.0); n];
    let g1 = vec![ScalarField::constant(1.0), ScalarField::constant(0.5), ScalarField::constant(0.0)];
    let g2 = vec![ScalarField::constant(0.0), ScalarField::constant(2.0), ScalarField::constant(-1.0)];
    let out = (0..n).map(|k| Expr::var(k).into()).collect();
    let sys = ControlAffineSystem::new(n, drift, vec![g1, g2], out).unwrap();
    let probe = ProbeConfig::new(SamplingBox::new(vec![-1.0; n], vec![1.0; n]).unwrap());
    let basis = build_basis(&sys, 2, &probe).unwrap();
    assert_eq!(basis.n(), n);
    assert!(basis.raw_count() > n);
}

#[test]
fn basis_sizes_are_frozen() {
    let sys = tractor_trailer_system(&PlantParams::default());
    let probe = ProbeConfig::new(SamplingBox::tractor_trailer_states(&Limits::default()));
    let b0 = build_basis(&sys, 0, &probe).unwrap();
    assert_eq!((b0.raw_count(), b0.n()), (50, 14));
    assert_eq!((BASIS.raw_count(), BASIS.n()), (554, 55));
    let again = build_basis(&sys, 2, &probe).unwrap();
    assert_eq!(again.manifest(), BASIS.manifest());
    assert_eq!(again.manifest_hash(), BASIS.manifest_hash());
}
