use kbmpc::lie::{expand_level, lie_derivative, Expr, ScalarField, Tape};
use kbmpc::lifting::{raw_candidates, SamplingBox};
use kbmpc::plant::{rk4, tractor_trailer_system, Limits, PlantParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn var(k: usize) -> ScalarField {
    Expr::var(k).into()
}

fn drift_flow(x: [f64; 6], t: f64) -> [f64; 6] {
    let sys = tractor_trailer_system(&PlantParams::default());
    let f = |x: &[f64; 6]| -> [f64; 6] {
        let r = sys.rhs(x, &[0.0, 0.0]);
        std::array::from_fn(|i| r[i])
    };
    let steps = 200;
    let mut x = x;
    for _ in 0..steps {
        x = rk4(&x, t / steps as f64, f);
    }
    x
}

#[test]
fn position_rate_along_drift() {
    let sys = tractor_trailer_system(&PlantParams::default());
    let d = lie_derivative(&var(0), sys.drift()).unwrap();
    assert_eq!(d.value(&[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]), 1.0);
    let x = [1.0, 2.0, 0.7, 0.2, 0.1, -0.6];
    assert!((d.value(&x) - (-0.6 * 0.7f64.cos())).abs() < 1e-15);
}

#[test]
fn constant_has_zero_derivative_everywhere() {
    let sys = tractor_trailer_system(&PlantParams::default());
    let d = lie_derivative(&ScalarField::constant(3.5), sys.drift()).unwrap();
    assert_eq!(d.as_const(), Some(0.0));
}

#[test]
fn second_derivative_matches_flow_differences() {
    let sys = tractor_trailer_system(&PlantParams::default());
    let lims = SamplingBox::tractor_trailer_states(&Limits::default());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-3;
    for k in [0, 2, 3] {
        let d1 = lie_derivative(&var(k), sys.drift()).unwrap();
        let d2 = lie_derivative(&d1, sys.drift()).unwrap();
        for _ in 0..20 {
            let x: [f64; 6] = lims.sample(&mut rng).try_into().unwrap();
            let fd = (drift_flow(x, h)[k] - 2.0 * x[k] + drift_flow(x, -h)[k]) / (h * h);
            let exact = d2.value(&x);
            assert!((fd - exact).abs() < 1e-5, "row {k}: {fd} vs {exact}");
        }
    }
}

#[test]
fn expansion_multiplies_by_input_count_plus_one() {
    let sys = tractor_trailer_system(&PlantParams::default());
    let one = expand_level(&[var(2)], &sys);
    assert_eq!(one.len(), 3);
    assert_eq!(expand_level(&one, &sys).len(), 9);
}

#[test]
fn steering_row_children_vanish() {
    let sys = tractor_trailer_system(&PlantParams::default());
    // level 0 of the tan_phi row: f = 0, g_1 = 1, g_2 = 0
    let level0 = vec![sys.drift()[4].clone(), sys.control(0)[4].clone(), sys.control(1)[4].clone()];
    let children = expand_level(&level0, &sys);
    assert_eq!(children.len(), 9);
    assert!(children.iter().all(|c| c.as_const() == Some(0.0)));
}

#[test]
fn chain_counts_follow_the_branching_factor() {
    let sys = tractor_trailer_system(&PlantParams::default());
    let raw = raw_candidates(&sys, 3);
    for n in 0..=3usize {
        let at_level = raw.iter().filter(|(_, p)| p.level == Some(n)).count();
        // 8 output chains and 6 state chains, each starting with 3 fields
        assert_eq!(at_level, 14 * 3usize.pow(n as u32 + 1));
    }
}

#[test]
fn chain_gradients_match_central_differences() {
    let sys = tractor_trailer_system(&PlantParams::default());
    let raw = raw_candidates(&sys, 3);
    let exprs: Vec<Expr> = raw.iter().map(|(f, _)| f.expr().clone()).collect();
    let tape = Tape::compile(&exprs, 6);
    let lims = SamplingBox::tractor_trailer_states(&Limits::default());
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let h = 1e-6;
    for _ in 0..100 {
        let x = lims.sample(&mut rng);
        let (_, grads) = tape.eval_with_gradient(&x);
        for k in 0..6 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[k] += h;
            xm[k] -= h;
            let (vp, vm) = (tape.eval(&xp), tape.eval(&xm));
            for (r, g) in grads.iter().enumerate() {
                let fd = (vp[r] - vm[r]) / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1.0),
                    "field {r}, variable {k}: {fd} vs {}",
                    g[k]
                );
            }
        }
    }
}

proptest! {
    #[test]
    fn lie_derivative_is_linear_in_the_field(
        x in prop::array::uniform6(-1.0..1.0f64),
        a in -3.0..3.0f64,
    ) {
        let sys = tractor_trailer_system(&PlantParams::default());
        let phi: ScalarField = (Expr::var(2).sin().mul(&Expr::var(5))).into();
        let scaled: Vec<ScalarField> = sys.drift().iter().map(|f| f.expr().scale(a).into()).collect();
        let lhs = lie_derivative(&phi, &scaled).unwrap().value(&x);
        let rhs = a * lie_derivative(&phi, sys.drift()).unwrap().value(&x);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn gradient_of_product_obeys_the_product_rule(x in prop::array::uniform6(-1.0..1.0f64)) {
        let sys = tractor_trailer_system(&PlantParams::default());
        let (p, q) = (sys.drift()[0].clone(), sys.drift()[3].clone());
        let pq: ScalarField = p.expr().mul(q.expr()).into();
        let (vp, gp) = p.value_and_gradient(&x);
        let (vq, gq) = q.value_and_gradient(&x);
        let (_, g) = pq.value_and_gradient(&x);
        for k in 0..6 {
            let expect = gp[k] * vq + vp * gq[k];
            prop_assert!((g[k] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }
}
