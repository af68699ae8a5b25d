//! Iterative-QP tracking MPC over a bilinear or linearized prediction model.
//!
//! Each inner iteration linearizes the predictor about the current guess
//! `(ẑ, û)`, eliminates the state deviations `Δz` by forward substitution,
//! solves a dense QP in the stacked input deviations `Δu`, and adds the
//! result to the guess. The first input of the final guess is applied.

mod closed_loop;
mod predictor;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{wrap_angle, Control, Limits, Output, State, N_INPUT, N_OUTPUT};
use crate::qp::{self, QpProblem, QpSettings, QpStatus, WarmStart};

pub use closed_loop::{
    closed_loop, ClosedLoopConfig, ControllerKind, LogRow, TimingSummary, TrackingLog, TrackingSummary, LOG_HEADER,
};
pub use predictor::{BilinearPredictor, NominalPredictor, Predictor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    /// Prediction horizon `N_p` in steps.
    pub horizon: usize,
    /// Diagonal of the stage output weight.
    pub q: Vec<f64>,
    /// Diagonal of the terminal output weight.
    pub q_terminal: Vec<f64>,
    /// Diagonal of the input weight.
    pub r: Vec<f64>,
    pub iter_max: usize,
    /// Inner iterations stop once `‖Δu‖∞` falls to this value.
    pub eps_conv: f64,
    pub ts: f64,
    pub limits: Limits,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        let q = vec![10.0, 10.0, 1.0, 1.0, 0.0, 0.0, 10.0, 10.0];
        MpcConfig {
            horizon: 20,
            q_terminal: q.iter().map(|v| 10.0 * v).collect(),
            q,
            r: vec![0.01, 1.0],
            iter_max: 3,
            eps_conv: 1e-4,
            ts: 0.05,
            limits: Limits::default(),
            qp_tol: 1e-6,
            qp_max_iter: 4000,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.iter_max == 0 {
            return Err(Error::invalid("horizon and iter_max must be at least 1"));
        }
        if self.q.len() != N_OUTPUT || self.q_terminal.len() != N_OUTPUT {
            return Err(Error::dim("output weight diagonal", N_OUTPUT, self.q.len().min(self.q_terminal.len())));
        }
        if self.r.len() != N_INPUT {
            return Err(Error::dim("input weight diagonal", N_INPUT, self.r.len()));
        }
        let nonneg = |v: &[f64]| v.iter().all(|x| *x >= 0.0 && x.is_finite());
        if !nonneg(&self.q) || !nonneg(&self.q_terminal) || !self.r.iter().all(|x| *x > 0.0 && x.is_finite()) {
            return Err(Error::invalid("output weights must be non-negative and input weights positive"));
        }
        if !(self.eps_conv >= 0.0) || !(self.ts > 0.0) || !(self.qp_tol > 0.0) || self.qp_max_iter == 0 {
            return Err(Error::invalid("eps_conv, ts, qp_tol and qp_max_iter must be positive"));
        }
        self.limits.validate()
    }

    pub fn weights(&self) -> Weights {
        Weights {
            q: DMatrix::from_diagonal(&DVector::from_column_slice(&self.q)),
            q_terminal: DMatrix::from_diagonal(&DVector::from_column_slice(&self.q_terminal)),
            r: DMatrix::from_diagonal(&DVector::from_column_slice(&self.r)),
        }
    }

    fn qp_settings(&self) -> QpSettings {
        QpSettings {
            tol: self.qp_tol,
            max_iter: self.qp_max_iter,
            ..Default::default()
        }
    }
}

/// Stage, terminal and input weights as matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub q: DMatrix<f64>,
    pub q_terminal: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Rows `E y_k + F u_k ≤ l` of one stage. The terminal stage has no `F`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageConstraint {
    pub e: DMatrix<f64>,
    pub f: Option<DMatrix<f64>>,
    pub l: DVector<f64>,
}

impl StageConstraint {
    /// Largest `E y + F u − l`.
    pub fn violation(&self, y: &DVector<f64>, u: Option<&DVector<f64>>) -> f64 {
        let mut r = &self.e * y - &self.l;
        if let (Some(f), Some(u)) = (&self.f, u) {
            r += f * u;
        }
        r.max()
    }
}

/// Stage constraints for `k = 0, …, N_p`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSet {
    pub stages: Vec<StageConstraint>,
}

impl ConstraintSet {
    /// Input bounds `|ω|, |a|` and output bounds `|tan φ|, |v|, |θ0 − θ1|` on
    /// every stage.
    pub fn tractor_trailer(lim: &Limits, horizon: usize) -> Self {
        let (ny, m) = (N_OUTPUT, N_INPUT);
        let out_rows: [([f64; N_OUTPUT], f64); 6] = {
            let unit = |i: usize, s: f64| std::array::from_fn(|c| if c == i { s } else { 0.0 });
            let dtheta = |s: f64| std::array::from_fn(|c| match c {
                2 => s,
                3 => -s,
                _ => 0.0,
            });
            [
                (unit(4, 1.0), lim.tan_phi_max),
                (unit(4, -1.0), lim.tan_phi_max),
                (unit(5, 1.0), lim.v_max),
                (unit(5, -1.0), lim.v_max),
                (dtheta(1.0), lim.dtheta_max),
                (dtheta(-1.0), lim.dtheta_max),
            ]
        };
        let in_rows = [
            ([1.0, 0.0], lim.omega_max),
            ([-1.0, 0.0], lim.omega_max),
            ([0.0, 1.0], lim.a_max),
            ([0.0, -1.0], lim.a_max),
        ];
        let stage = |terminal: bool| {
            let rows = out_rows.len() + if terminal { 0 } else { in_rows.len() };
            let mut e = DMatrix::zeros(rows, ny);
            let mut f = DMatrix::zeros(rows, m);
            let mut l = DVector::zeros(rows);
            for (r, (coef, bound)) in out_rows.iter().enumerate() {
                e.row_mut(r).copy_from_slice(coef);
                l[r] = *bound;
            }
            if !terminal {
                for (i, (coef, bound)) in in_rows.iter().enumerate() {
                    let r = out_rows.len() + i;
                    f.row_mut(r).copy_from_slice(coef);
                    l[r] = *bound;
                }
            }
            StageConstraint {
                e,
                f: (!terminal).then_some(f),
                l,
            }
        };
        let mut stages: Vec<StageConstraint> = (0..horizon).map(|_| stage(false)).collect();
        stages.push(stage(true));
        ConstraintSet { stages }
    }

    pub fn horizon(&self) -> usize {
        self.stages.len().saturating_sub(1)
    }
}

/// Guess `(ẑ, û)` over the horizon and the last applied input.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationState {
    /// `N_p + 1` lifted states.
    pub z_hat: Vec<DVector<f64>>,
    /// `N_p` inputs.
    pub u_hat: Vec<DVector<f64>>,
    /// Inner iterations spent on the current guess.
    pub iteration: usize,
    pub last_applied: DVector<f64>,
    /// Set by [`IterationState::shifted`]: the next step re-rolls `ẑ` from
    /// the measured state.
    pub needs_reroll: bool,
}

impl IterationState {
    /// `û = u₀ ⊗ 1`, `ẑ = z₀ ⊗ 1`.
    pub fn initial(z0: DVector<f64>, u0: DVector<f64>, horizon: usize) -> Self {
        IterationState {
            z_hat: vec![z0; horizon + 1],
            u_hat: vec![u0.clone(); horizon],
            iteration: 0,
            last_applied: u0,
            needs_reroll: false,
        }
    }

    pub fn horizon(&self) -> usize {
        self.u_hat.len()
    }

    /// Advances the guess one step, repeating the last entries.
    pub fn shifted(&self) -> Self {
        let mut z_hat = self.z_hat[1..].to_vec();
        z_hat.push(self.z_hat[self.z_hat.len() - 1].clone());
        let mut u_hat = self.u_hat[1..].to_vec();
        u_hat.push(self.u_hat[self.u_hat.len() - 1].clone());
        IterationState {
            z_hat,
            u_hat,
            iteration: 0,
            last_applied: self.last_applied.clone(),
            needs_reroll: true,
        }
    }

    /// Replaces `ẑ` by the predictor rollout from `z0` under `û`.
    pub fn reroll(&mut self, pred: &dyn Predictor, z0: DVector<f64>) {
        self.z_hat[0] = z0;
        for k in 0..self.u_hat.len() {
            self.z_hat[k + 1] = pred.step(&self.z_hat[k], self.u_hat[k].as_slice());
        }
        self.needs_reroll = false;
    }
}

/// The QP in `Δu = [Δu_0; …; Δu_{N_p−1}]` and the affine maps needed to
/// recover `Δz` and the predicted outputs.
#[derive(Clone, Debug)]
pub struct Condensed {
    pub qp: QpProblem,
    /// `Δz_k = S_k Δu + e_k`.
    pub s: Vec<DMatrix<f64>>,
    pub e: Vec<DVector<f64>>,
    /// Model residuals `d_k = f(ẑ_k, û_k) − ẑ_{k+1}`.
    pub residuals: Vec<DVector<f64>>,
    /// Predicted outputs `y_k = y0_k + M_k Δu`.
    pub y0: Vec<DVector<f64>>,
    pub m: Vec<DMatrix<f64>>,
    /// Tracking objective at `Δu = 0`.
    pub cost_at_zero: f64,
    /// Constraint rows that do not depend on `Δu`; the largest violation
    /// among them (or `-∞`). They are left out of the QP.
    pub fixed_violation: f64,
}

impl Condensed {
    pub fn delta_z(&self, du: &DVector<f64>) -> Vec<DVector<f64>> {
        self.s.iter().zip(&self.e).map(|(s, e)| s * du + e).collect()
    }

    pub fn outputs(&self, du: &DVector<f64>) -> Vec<DVector<f64>> {
        self.m.iter().zip(&self.y0).map(|(m, y)| m * du + y).collect()
    }

    /// Tracking objective at `Δu`.
    pub fn cost(&self, du: &DVector<f64>) -> f64 {
        self.cost_at_zero + self.qp.objective(du)
    }
}

/// Builds the dense QP for one inner iteration. `refs` holds `N_p + 1`
/// output references.
pub fn condense(
    pred: &dyn Predictor,
    st: &IterationState,
    refs: &[DVector<f64>],
    w: &Weights,
    cons: &ConstraintSet,
) -> Result<Condensed> {
    let np = st.horizon();
    let (n, m, ny) = (pred.state_dim(), pred.input_dim(), pred.output_dim());
    if np == 0 {
        return Err(Error::invalid("horizon must be at least one step"));
    }
    if st.z_hat.len() != np + 1 {
        return Err(Error::dim("lifted state guess", np + 1, st.z_hat.len()));
    }
    if refs.len() != np + 1 {
        return Err(Error::dim("reference window", np + 1, refs.len()));
    }
    if cons.stages.len() != np + 1 {
        return Err(Error::dim("constraint stages", np + 1, cons.stages.len()));
    }
    if let Some(z) = st.z_hat.iter().find(|z| z.len() != n) {
        return Err(Error::dim("lifted state", n, z.len()));
    }
    if let Some(u) = st.u_hat.iter().find(|u| u.len() != m) {
        return Err(Error::dim("input guess", m, u.len()));
    }
    if let Some(r) = refs.iter().find(|r| r.len() != ny) {
        return Err(Error::dim("reference output", ny, r.len()));
    }
    if w.q.nrows() != ny || w.q_terminal.nrows() != ny || w.r.nrows() != m {
        return Err(Error::dim("weights", ny, w.q.nrows()));
    }
    for c in &cons.stages {
        if c.e.ncols() != ny || c.f.as_ref().is_some_and(|f| f.ncols() != m) {
            return Err(Error::dim("constraint columns", ny, c.e.ncols()));
        }
    }

    let nv = np * m;
    let mut s = Vec::with_capacity(np + 1);
    let mut e = Vec::with_capacity(np + 1);
    let mut residuals = Vec::with_capacity(np);
    s.push(DMatrix::zeros(n, nv));
    e.push(DVector::zeros(n));
    for k in 0..np {
        let (a, b) = pred.jacobians(&st.z_hat[k], st.u_hat[k].as_slice());
        let dk = pred.step(&st.z_hat[k], st.u_hat[k].as_slice()) - &st.z_hat[k + 1];
        let mut sk = &a * &s[k];
        let mut blk = sk.view_mut((0, k * m), (n, m));
        blk += &b;
        e.push(&a * &e[k] + &dk);
        s.push(sk);
        residuals.push(dk);
    }

    let mut p = DMatrix::zeros(nv, nv);
    let mut q = DVector::zeros(nv);
    let mut cost_at_zero = 0.0;
    let mut y0 = Vec::with_capacity(np + 1);
    let mut mk_all = Vec::with_capacity(np + 1);
    for k in 0..=np {
        let (yk, ck) = pred.output(&st.z_hat[k]);
        let base = &yk + &ck * &e[k];
        let mk = &ck * &s[k];
        let qk = if k == np { &w.q_terminal } else { &w.q };
        let err = &base - &refs[k];
        let qerr = qk * &err;
        cost_at_zero += err.dot(&qerr);
        let qm = qk * &mk;
        p.gemm_tr(2.0, &mk, &qm, 1.0);
        q.gemv_tr(2.0, &mk, &qerr, 1.0);
        y0.push(base);
        mk_all.push(mk);
    }
    for k in 0..np {
        let ru = &w.r * &st.u_hat[k];
        cost_at_zero += st.u_hat[k].dot(&ru);
        let mut pb = p.view_mut((k * m, k * m), (m, m));
        pb += &w.r * 2.0;
        let mut qb = q.rows_mut(k * m, m);
        qb += ru * 2.0;
    }
    let p = (&p + p.transpose()) * 0.5;

    let mut g_rows: Vec<DVector<f64>> = Vec::new();
    let mut h_vals = Vec::new();
    let mut fixed_violation = f64::NEG_INFINITY;
    for (k, c) in cons.stages.iter().enumerate() {
        let em = &c.e * &mk_all[k];
        let mut rhs = &c.l - &c.e * &y0[k];
        let mut coef = em;
        if let Some(f) = &c.f {
            if k < np {
                rhs -= f * &st.u_hat[k];
                let mut blk = coef.view_mut((0, k * m), (c.l.len(), m));
                blk += f;
            }
        }
        for r in 0..c.l.len() {
            let row = coef.row(r).transpose();
            if row.amax() <= 1e-13 {
                fixed_violation = fixed_violation.max(-rhs[r]);
            } else {
                g_rows.push(row);
                h_vals.push(rhs[r]);
            }
        }
    }
    let g = if g_rows.is_empty() {
        DMatrix::zeros(0, nv)
    } else {
        DMatrix::from_fn(g_rows.len(), nv, |r, c| g_rows[r][c])
    };
    let qp = QpProblem::new(p, q, g, DVector::from_vec(h_vals))?;
    Ok(Condensed {
        qp,
        s,
        e,
        residuals,
        y0,
        m: mk_all,
        cost_at_zero,
        fixed_violation,
    })
}

/// What happened during one controller step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub iterations: usize,
    /// `‖Δu*‖∞` of every inner iteration.
    pub du_norms: Vec<f64>,
    /// Tracking objective at `Δu = 0` before every inner iteration.
    pub costs_at_zero: Vec<f64>,
    pub qp_status: QpStatus,
    /// The QP failed and the previous input was held.
    pub fallback: bool,
    /// Largest violation of the output and input rows by the outputs the last
    /// QP predicted, over stages `1..=N_p`.
    pub predicted_violation: f64,
    /// Indices of active rows of the last QP.
    pub active_rows: Vec<usize>,
    pub qp_iterations: usize,
}

/// Heading references unwrapped along the window, starting from the current
/// headings.
pub fn unwrap_reference(refs: &[Output], x: &State) -> Vec<DVector<f64>> {
    let mut prev = [x.theta0, x.theta1];
    refs.iter()
        .map(|r| {
            let mut v = r.0;
            for (c, p) in [2usize, 3].into_iter().zip(prev.iter_mut()) {
                v[c] = *p + wrap_angle(v[c] - *p);
                *p = v[c];
            }
            DVector::from_column_slice(&v)
        })
        .collect()
}

/// One receding-horizon step: inner iterations, the applied input and the
/// shifted guess for the next step.
pub fn mpc_step(
    pred: &dyn Predictor,
    x0: &State,
    refs: &[Output],
    cfg: &MpcConfig,
    cons: &ConstraintSet,
    warm: &IterationState,
) -> Result<(Control, IterationState, StepDiagnostics)> {
    if refs.len() != cfg.horizon + 1 {
        return Err(Error::dim("reference window", cfg.horizon + 1, refs.len()));
    }
    if warm.horizon() != cfg.horizon {
        return Err(Error::dim("warm start horizon", cfg.horizon, warm.horizon()));
    }
    let refs = unwrap_reference(refs, x0);
    let weights = cfg.weights();
    let settings = cfg.qp_settings();
    let z0 = pred.lift(x0);
    let mut st = warm.clone();
    if st.needs_reroll {
        st.reroll(pred, z0);
    } else {
        st.z_hat[0] = z0;
    }

    let mut diag = StepDiagnostics {
        iterations: 0,
        du_norms: Vec::new(),
        costs_at_zero: Vec::new(),
        qp_status: QpStatus::Solved,
        fallback: false,
        predicted_violation: f64::NEG_INFINITY,
        active_rows: Vec::new(),
        qp_iterations: 0,
    };
    let mut qp_warm: Option<WarmStart> = None;
    for _ in 0..cfg.iter_max {
        let cond = condense(pred, &st, &refs, &weights, cons)?;
        diag.costs_at_zero.push(cond.cost_at_zero);
        let ws = qp_warm.as_ref().filter(|w| w.lambda.len() == cond.qp.n_ineq());
        let sol = qp::solve(&cond.qp, &settings, ws)?;
        diag.iterations += 1;
        diag.qp_status = sol.status;
        diag.qp_iterations += sol.iterations;
        if sol.status != QpStatus::Solved {
            diag.fallback = true;
            break;
        }
        let dz = cond.delta_z(&sol.w);
        let m = pred.input_dim();
        for (k, dzk) in dz.iter().enumerate() {
            st.z_hat[k] += dzk;
            if k < st.u_hat.len() {
                let mut uk = st.u_hat[k].clone();
                uk += sol.w.rows(k * m, m);
                st.u_hat[k] = uk;
            }
        }
        st.iteration += 1;
        let ys = cond.outputs(&sol.w);
        diag.predicted_violation = (1..=cfg.horizon)
            .map(|k| cons.stages[k].violation(&ys[k], st.u_hat.get(k)))
            .fold(f64::NEG_INFINITY, f64::max);
        diag.active_rows = sol.active_set(0.0);
        let du = sol.w.amax();
        diag.du_norms.push(du);
        qp_warm = Some(WarmStart {
            w: DVector::zeros(sol.w.len()),
            lambda: sol.lambda,
        });
        if du <= cfg.eps_conv {
            break;
        }
    }

    let u = if diag.fallback {
        warm.last_applied.clone()
    } else {
        let u0 = &st.u_hat[0];
        let c = cfg.limits.clamp(Control::from_slice(u0.as_slice()));
        DVector::from_column_slice(&c.to_array())
    };
    let mut next = if diag.fallback { warm.clone() } else { st };
    next.last_applied = u.clone();
    let next = next.shifted();
    Ok((Control::from_slice(u.as_slice()), next, diag))
}

/// One step of the bilinear-model controller.
pub fn kbmpc_step(
    pred: &BilinearPredictor<'_>,
    x0: &State,
    refs: &[Output],
    cfg: &MpcConfig,
    cons: &ConstraintSet,
    warm: &IterationState,
) -> Result<(Control, IterationState, StepDiagnostics)> {
    mpc_step(pred, x0, refs, cfg, cons, warm)
}

/// One step of the controller built on the slip-free plant, linearized and
/// discretized by forward Euler at every inner iteration.
pub fn lmpc_step(
    pred: &NominalPredictor,
    x0: &State,
    refs: &[Output],
    cfg: &MpcConfig,
    cons: &ConstraintSet,
    warm: &IterationState,
) -> Result<(Control, IterationState, StepDiagnostics)> {
    mpc_step(pred, x0, refs, cfg, cons, warm)
}
