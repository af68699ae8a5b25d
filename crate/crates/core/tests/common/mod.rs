#![allow(dead_code)]

use kbmpc::bilinear::BilinearModel;
use kbmpc::config::RunConfig;
use kbmpc::edmd::{fit, generate_dataset, GramAccumulator};
use kbmpc::lifting::{stack_features, LiftingBasis};
use kbmpc::pipeline::basis_for;
use kbmpc::qp::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random strictly convex QP that is feasible by construction: `h` is `G w₀`
/// plus a slack that is zero for roughly a third of the rows.
pub fn random_qp(seed: u64, n: usize, m: usize) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut p = a.transpose() * &a;
    for i in 0..n {
        p[(i, i)] += 0.1;
    }
    let q = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let g = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let w0 = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
    let slack = DVector::from_fn(m, |_, _| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..1.0) });
    let h = &g * w0 + slack;
    QpProblem::new(p, q, g, h).unwrap()
}

/// Minimum objective over all equality-constrained candidates whose active set
/// has at most three rows and that satisfy every constraint.
pub fn brute_force_objective(qp: &QpProblem) -> f64 {
    let m = qp.n_ineq();
    let mut subsets: Vec<Vec<usize>> = vec![vec![]];
    for i in 0..m {
        subsets.push(vec![i]);
        for j in i + 1..m {
            subsets.push(vec![i, j]);
            for k in j + 1..m {
                subsets.push(vec![i, j, k]);
            }
        }
    }
    let n = qp.n();
    let mut best = f64::INFINITY;
    for s in subsets {
        let k = s.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
        let mut rhs = DVector::zeros(n + k);
        for r in 0..n {
            rhs[r] = -qp.q[r];
        }
        for (a, &i) in s.iter().enumerate() {
            for c in 0..n {
                kkt[(n + a, c)] = qp.g[(i, c)];
                kkt[(c, n + a)] = qp.g[(i, c)];
            }
            rhs[n + a] = qp.h[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let w = sol.rows(0, n).into_owned();
        let feasible = (&qp.g * &w - &qp.h).iter().all(|v| *v <= 1e-9);
        if feasible {
            best = best.min(qp.objective(&w));
        }
    }
    best
}

/// Ground truth of an exactly bilinear system `z⁺ = Az + Bu + Σ u_j H_j z`.
pub struct Bilinear {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub h: Vec<DMatrix<f64>>,
}

impl Bilinear {
    pub fn random(seed: u64, n: usize, m: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (n as f64).sqrt();
        let mut mat = |rows, cols, scale: f64| DMatrix::from_fn(rows, cols, |_, _| scale * rng.gen_range(-1.0..1.0));
        Bilinear {
            a: mat(n, n, 0.5 * s),
            b: mat(n, m, 1.0),
            h: (0..m).map(|_| mat(n, n, 0.2 * s)).collect(),
        }
    }

    pub fn step(&self, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.a * z + &self.b * u;
        for (hj, uj) in self.h.iter().zip(u.iter()) {
            out += hj * z * *uj;
        }
        out
    }

    /// Accumulates `samples` transitions from uniformly drawn `(z, u)`.
    pub fn accumulate(&self, seed: u64, samples: usize, zero_controls: bool) -> GramAccumulator {
        let (n, m) = (self.a.nrows(), self.b.ncols());
        let dim = (m + 1) * n + m;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut feats = DMatrix::zeros(samples, dim);
        let mut targets = DMatrix::zeros(samples, n);
        let mut row = vec![0.0; dim];
        for k in 0..samples {
            let z = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let u = if zero_controls {
                DVector::zeros(m)
            } else {
                DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0))
            };
            stack_features(z.as_slice(), u.as_slice(), &mut row);
            feats.row_mut(k).copy_from_slice(&row);
            targets.row_mut(k).copy_from_slice(self.step(&z, &u).as_slice());
        }
        let mut acc = GramAccumulator::new(dim, n);
        acc.add_rows(&feats, &targets).unwrap();
        acc
    }

    /// Largest Frobenius error over `A`, `B` and the `H_j` of a fit.
    pub fn recovery_error(&self, model: &BilinearModel) -> f64 {
        let mut e = (&model.a - &self.a).norm().max((&model.b - &self.b).norm());
        for (hm, ht) in model.h.iter().zip(&self.h) {
            e = e.max((hm - ht).norm());
        }
        e
    }
}

/// Fits a synthetic bilinear system from 10k transitions at ridge `1e-10`
/// and returns the recovery error.
pub fn synthetic_recovery_error(seed: u64, n: usize, m: usize) -> f64 {
    let truth = Bilinear::random(seed, n, m);
    let acc = truth.accumulate(seed + 1000, 10_000, false);
    let g = acc.solve(Some(1e-10)).unwrap();
    let model = BilinearModel::from_blocks(&g, m, n, 0.05, 0, String::new()).unwrap();
    truth.recovery_error(&model)
}

/// The default configuration with tracking logs free of wall-clock data.
pub fn quiet_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.tracking.closed_loop.record_timing = false;
    cfg
}

/// Desk-scale dataset and ρ = 2 fit under the default configuration.
pub fn desk_model(cfg: &RunConfig) -> (LiftingBasis, BilinearModel) {
    let ds = generate_dataset(&cfg.data, &cfg.plant, &cfg.limits, None).unwrap();
    let basis = basis_for(cfg).unwrap();
    let model = fit(&ds, &basis, cfg.edmd.ridge).unwrap();
    (basis, model)
}
