//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints its verdict on each run; exits non-zero if any fails.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use common::{brute_force_objective, desk_model, random_qp, synthetic_recovery_error};
use kbmpc::bilinear::{evaluate_open_loop, PredictContext, Variant};
use kbmpc::config::RunConfig;
use kbmpc::lifting::{estimate_f_max, truncation_error_bound, DerivativeChains, SamplingBox};
use kbmpc::mpc::{
    closed_loop, condense, BilinearPredictor, ConstraintSet, ControllerKind, IterationState, NominalPredictor,
    Predictor,
};
use kbmpc::pipeline::{cmd_demo, load_reference, SUMMARY_JSON};
use kbmpc::plant::{rk4, sample_control, sample_state, tractor_trailer_system, Control, PlantParams, State};
use kbmpc::qp::{kkt_residuals, solve, QpSettings, QpStatus};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

const CHANNELS: [&str; 4] = ["e_x0y0", "e_x1y1", "e_theta0", "e_theta1"];

fn open_loop(cfg: &RunConfig) -> (Verdict, Verdict) {
    let start = Instant::now();
    let (basis, model) = desk_model(cfg);
    let ctx = PredictContext::new(&model, &basis, &cfg.plant).unwrap();
    let report = evaluate_open_loop(&ctx, &cfg.openloop, &cfg.limits, &Variant::ALL).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let get = |v| report.mean_of(v).unwrap().as_array();
    let (kbm, lkbm, nm, llnm) = (get(Variant::Kbm), get(Variant::Lkbm), get(Variant::Nm), get(Variant::Llnm));
    let mut ok = true;
    let mut detail = String::new();
    for c in 0..4 {
        let holds = kbm[c] < lkbm[c] && lkbm[c] < nm[c].min(llnm[c]);
        ok &= holds;
        detail.push_str(&format!(
            "{} KBM {:.3e} LKBM {:.3e} NM {:.3e} LLNM {:.3e}{}; ",
            CHANNELS[c],
            kbm[c],
            lkbm[c],
            nm[c],
            llnm[c],
            if holds { "" } else { " (order broken)" }
        ));
    }
    detail.push_str(&format!("{} rollouts, {secs:.1} s", report.rollouts));
    let first = verdict(ok && secs < 300.0, detail);
    let second = verdict(
        kbm[0] <= 1e-2,
        format!("KBM mean e_x0y0 {:.3e} m (limit 1e-2 m)", kbm[0]),
    );
    (first, second)
}

fn truncation_bound() -> Verdict {
    let sys = tractor_trailer_system(&PlantParams::default().nominal());
    let chains = DerivativeChains::new(&sys, 3);
    let lim = kbmpc::plant::Limits::default();
    let (ts, steps) = (0.05, 20);
    let horizon = ts * steps as f64;
    // every state the rollouts can reach: steering and speed drift by at most
    // their rate limit times the horizon; headings enter only through sin/cos
    let reach = SamplingBox::new(
        vec![-10.0, -10.0, -PI, -PI, -(lim.tan_phi_max + lim.omega_max * horizon), -(lim.v_max + lim.a_max * horizon)],
        vec![10.0, 10.0, PI, PI, lim.tan_phi_max + lim.omega_max * horizon, lim.v_max + lim.a_max * horizon],
    )
    .unwrap();
    let inputs = SamplingBox::tractor_trailer_inputs(&lim);
    let nominal = PlantParams::default().nominal();
    let f = |u: Control| {
        move |x: &[f64; 6]| kbmpc::plant::plant_derivative(&State::from_array(*x), &u, &nominal)
    };
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for rho in [1usize, 2] {
        let f_max = estimate_f_max(&chains, rho + 1, &reach, &inputs, 20_000, 99, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1234 + rho as u64);
        let mut rho_worst = 0.0f64;
        for _ in 0..100 {
            let x0 = sample_state(&mut rng, &lim, 10.0);
            let mut pred = x0.to_array();
            let mut truth = x0.to_array();
            for k in 1..=steps {
                let u = sample_control(&mut rng, &lim);
                pred = chains.taylor_step(&pred, &u.to_array(), ts, rho).try_into().unwrap();
                for _ in 0..20 {
                    truth = rk4(&truth, ts / 20.0, f(u));
                }
                let bound = truncation_error_bound(rho, k, ts, &f_max);
                for i in 0..6 {
                    let err = (pred[i] - truth[i]).abs();
                    // rows with a zero bound are exact up to roundoff
                    if err > bound[i] + 1e-12 {
                        violations += 1;
                    }
                    if bound[i] > 1e-10 {
                        rho_worst = rho_worst.max(err / bound[i]);
                    }
                }
            }
        }
        worst = worst.max(rho_worst);
        detail.push_str(&format!("rho {rho}: largest error/bound {rho_worst:.3e} on rows with bound > 1e-10; "));
    }
    detail.push_str(&format!("{violations} violations over 2 x 100 rollouts x 20 steps"));
    verdict(violations == 0 && worst <= 1.0, detail)
}

fn taylor_order() -> Verdict {
    let sys = tractor_trailer_system(&PlantParams::default().nominal());
    let chains = DerivativeChains::new(&sys, 2);
    let nominal = PlantParams::default().nominal();
    let lim = kbmpc::plant::Limits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let points: Vec<(State, Control)> = (0..20)
        .map(|_| (sample_state(&mut rng, &lim, 10.0), sample_control(&mut rng, &lim)))
        .collect();
    let steps = [0.1, 0.05, 0.025, 0.0125];
    let mut ok = true;
    let mut detail = String::new();
    for rho in 0..=2usize {
        let logs: Vec<(f64, f64)> = steps
            .iter()
            .map(|&ts| {
                let err = points
                    .iter()
                    .map(|(x, u)| {
                        let f = |s: &[f64; 6]| kbmpc::plant::plant_derivative(&State::from_array(*s), u, &nominal);
                        let mut truth = x.to_array();
                        for _ in 0..200 {
                            truth = rk4(&truth, ts / 200.0, f);
                        }
                        let pred = chains.taylor_step(&x.to_array(), &u.to_array(), ts, rho);
                        pred.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                    })
                    .fold(0.0, f64::max);
                (ts.ln(), err.ln())
            })
            .collect();
        let n = logs.len() as f64;
        let (mx, my) = (logs.iter().map(|p| p.0).sum::<f64>() / n, logs.iter().map(|p| p.1).sum::<f64>() / n);
        let slope = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / logs.iter().map(|(x, _)| (x - mx).powi(2)).sum::<f64>();
        let holds = slope >= rho as f64 + 0.5;
        ok &= holds;
        detail.push_str(&format!("rho {rho}: slope {slope:.2} (need >= {:.1}); ", rho as f64 + 0.5));
    }
    verdict(ok, detail.trim_end_matches("; ").to_string())
}

fn edmd_recovery() -> Verdict {
    let cases = [(1u64, 4usize, 1usize), (2, 10, 2), (3, 15, 3), (4, 20, 2), (5, 20, 3)];
    let mut worst = 0.0f64;
    for (seed, n, m) in cases {
        worst = worst.max(synthetic_recovery_error(seed, n, m));
    }
    verdict(
        worst <= 1e-8,
        format!("largest Frobenius error {worst:.2e} over {} systems (N <= 20, m <= 3, 10k transitions, ridge 1e-10)", cases.len()),
    )
}

fn qp_correctness() -> Verdict {
    let settings = QpSettings::default();
    let mut worst_kkt = 0.0f64;
    let mut unsolved = 0;
    let mut worst_gap = 0.0f64;
    let mut small = 0;
    for seed in 0..100u64 {
        let n = 2 + (seed as usize * 7) % 39;
        let m = (seed as usize * 37) % 201;
        let qp = random_qp(seed, n, m);
        let sol = solve(&qp, &settings, None).unwrap();
        if sol.status != QpStatus::Solved {
            unsolved += 1;
        }
        worst_kkt = worst_kkt.max(kkt_residuals(&qp, &sol.w, &sol.lambda).max());
        if m <= 3 {
            small += 1;
            worst_gap = worst_gap.max((qp.objective(&sol.w) - brute_force_objective(&qp)).abs());
        }
    }
    for seed in 100..160u64 {
        let qp = random_qp(seed, 2 + seed as usize % 6, 1 + seed as usize % 3);
        let sol = solve(&qp, &settings, None).unwrap();
        worst_kkt = worst_kkt.max(kkt_residuals(&qp, &sol.w, &sol.lambda).max());
        worst_gap = worst_gap.max((qp.objective(&sol.w) - brute_force_objective(&qp)).abs());
        small += 1;
    }
    verdict(
        unsolved == 0 && worst_kkt <= 1e-6 && worst_gap <= 1e-6,
        format!(
            "160 QPs (n <= 40, up to 200 rows): largest KKT residual {worst_kkt:.2e}, {unsolved} unsolved; \
             {small} with <= 3 rows: largest objective gap to enumeration {worst_gap:.2e}"
        ),
    )
}

fn linearization_identities(cfg: &RunConfig) -> Verdict {
    let (basis, model) = desk_model(cfg);
    let kbm = BilinearPredictor::new(&model, &basis).unwrap();
    let nom = NominalPredictor::new(&cfg.plant, cfg.mpc.ts).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut tangency = 0.0f64;
    for _ in 0..200 {
        let x = sample_state(&mut rng, &cfg.limits, 10.0);
        let u = sample_control(&mut rng, &cfg.limits).to_array();
        let z = kbm.lift(&x);
        let lin = model.linearize(&z, &u);
        tangency = tangency.max((lin.step(&z, &u) - model.step(&z, &u)).amax());
    }

    let cons = ConstraintSet::tractor_trailer(&cfg.limits, cfg.mpc.horizon);
    let w = cfg.mpc.weights();
    let mut residual = 0.0f64;
    for pred in [&kbm as &dyn Predictor, &nom] {
        for _ in 0..20 {
            let x = sample_state(&mut rng, &cfg.limits, 10.0);
            let mut st = IterationState::initial(pred.lift(&x), DVector::zeros(2), cfg.mpc.horizon);
            for u in st.u_hat.iter_mut() {
                *u = DVector::from_column_slice(&sample_control(&mut rng, &cfg.limits).to_array());
            }
            st.reroll(pred, pred.lift(&x));
            let refs: Vec<DVector<f64>> = st.z_hat.iter().map(|z| pred.output(z).0).collect();
            let c = condense(pred, &st, &refs, &w, &cons).unwrap();
            residual = c.residuals.iter().fold(residual, |m, d| m.max(d.amax()));
            // one receding-horizon shift followed by the re-rollout
            let x1 = State::from_slice(&pred.output(&st.z_hat[1]).0.as_slice()[..6]);
            let mut next = st.shifted();
            next.reroll(pred, pred.lift(&x1));
            let c = condense(pred, &next, &refs, &w, &cons).unwrap();
            residual = c.residuals.iter().fold(residual, |m, d| m.max(d.amax()));
        }
    }
    verdict(
        tangency <= 1e-12 && residual <= 1e-10,
        format!("tangency gap {tangency:.2e} (limit 1e-12); largest d_k on exact rollouts {residual:.2e} (limit 1e-10)"),
    )
}

fn closed_loop_runs(cfg: &RunConfig) -> (Verdict, Verdict) {
    let start = Instant::now();
    let (basis, model) = desk_model(cfg);
    let (_, reference) = load_reference(cfg, None).unwrap();
    let kbm = BilinearPredictor::new(&model, &basis).unwrap();
    let nom = NominalPredictor::new(&cfg.plant, cfg.mpc.ts).unwrap();
    let cl = &cfg.tracking.closed_loop;
    let k = closed_loop(ControllerKind::Kbmpc, &kbm, &cfg.plant, &reference, &cfg.mpc, cl).unwrap();
    let l = closed_loop(ControllerKind::Lmpc, &nom, &cfg.plant, &reference, &cfg.mpc, cl).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (ks, ls) = (k.summary(&cfg.mpc).unwrap(), l.summary(&cfg.mpc).unwrap());
    let (ke, le) = (ks.mean_errors, ls.mean_errors);
    let ordering = ke.e_x1y1 < le.e_x1y1 && ke.e_theta1 < le.e_theta1 && ls.mean_cost > ks.mean_cost;
    let eight = verdict(
        ordering && ke.e_x1y1 <= 0.36 && secs < 180.0,
        format!(
            "K-BMPC e_x1y1 {:.4} m, e_theta1 {:.4} rad, cost {:.4}; LMPC e_x1y1 {:.4} m, e_theta1 {:.4} rad, cost {:.4} \
             (+{:.1}%); {} steps, {secs:.1} s",
            ke.e_x1y1,
            ke.e_theta1,
            ks.mean_cost,
            le.e_x1y1,
            le.e_theta1,
            ls.mean_cost,
            100.0 * (ls.mean_cost / ks.mean_cost - 1.0),
            ks.steps
        ),
    );
    let input = ks.max_input_violation.max(ls.max_input_violation).max(0.0);
    let predicted = ks.max_predicted_violation.max(ls.max_predicted_violation).max(0.0);
    let nine = verdict(
        input <= 1e-9 && predicted <= cfg.mpc.qp_tol && ks.fallbacks + ls.fallbacks == 0,
        format!(
            "largest applied-input excess {input:.2e} (limit 1e-9); largest predicted-output excess {predicted:.2e} \
             (limit {:.0e}); {} QP fallbacks",
            cfg.mpc.qp_tol,
            ks.fallbacks + ls.fallbacks
        ),
    );
    (eight, nine)
}

fn determinism(cfg: &RunConfig) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_demo(cfg, &a).unwrap();
    cmd_demo(cfg, &b).unwrap();
    let (sa, sb) = (std::fs::read(a.join(SUMMARY_JSON)).unwrap(), std::fs::read(b.join(SUMMARY_JSON)).unwrap());
    verdict(sa == sb, format!("summary.json of two demo runs: {} bytes, identical: {}", sa.len(), sa == sb))
}

fn main() {
    let cfg = RunConfig::default();
    let mut results: Vec<(usize, Verdict)> = Vec::new();
    let (one, two) = open_loop(&cfg);
    results.push((1, one));
    results.push((2, two));
    results.push((3, truncation_bound()));
    results.push((4, taylor_order()));
    results.push((5, edmd_recovery()));
    results.push((6, qp_correctness()));
    results.push((7, linearization_identities(&cfg)));
    let (eight, nine) = closed_loop_runs(&cfg);
    results.push((8, eight));
    results.push((9, nine));
    results.push((10, determinism(&cfg)));

    let mut failed = 0;
    for (n, v) in &results {
        println!("criterion {n:>2}: {} | {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all {} acceptance criteria passed", results.len());
}
