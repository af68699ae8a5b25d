//! Dense strictly convex QP `min ½wᵀPw + qᵀw  s.t.  Gw ≤ h`.
//!
//! The solver runs ADMM on the split `Gw = s, s ≤ h` with Ruiz equilibration,
//! over-relaxation and residual-balancing penalty updates, and polishes the
//! result by solving the equality-constrained KKT system on the detected active
//! set. The returned point is always checked by [`kkt_residuals`], which does
//! not share any bookkeeping with the iteration.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl QpProblem {
    pub fn new(p: DMatrix<f64>, q: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        let qp = QpProblem { p, q, g, h };
        qp.validate()?;
        Ok(qp)
    }

    /// Unconstrained problem.
    pub fn unconstrained(p: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        let n = q.len();
        Self::new(p, q, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.h.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(Error::dim("QP cost matrix", n, self.p.nrows()));
        }
        if self.g.ncols() != n || self.g.nrows() != self.h.len() {
            return Err(Error::dim("QP constraint matrix", self.h.len(), self.g.nrows()));
        }
        let finite = |m: &[f64]| m.iter().all(|v| v.is_finite());
        if !finite(self.p.as_slice()) || !finite(self.q.as_slice()) || !finite(self.g.as_slice()) || !finite(self.h.as_slice()) {
            return Err(Error::invalid("QP data must be finite"));
        }
        let scale = self.p.amax().max(1.0);
        if (&self.p - self.p.transpose()).amax() > 1e-10 * scale {
            return Err(Error::invalid("QP cost matrix is not symmetric"));
        }
        Ok(())
    }

    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(&self.p * w)) + self.q.dot(w)
    }

    /// The same problem with cost scaled by `c`.
    pub fn scaled_cost(&self, c: f64) -> Self {
        QpProblem {
            p: &self.p * c,
            q: &self.q * c,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub rho: f64,
    pub scaling_iters: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            tol: 1e-6,
            max_iter: 4000,
            sigma: 1e-6,
            alpha: 1.6,
            rho: 0.1,
            scaling_iters: 10,
            polish: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIter,
    Infeasible,
}

impl std::fmt::Display for QpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QpStatus::Solved => "solved",
            QpStatus::MaxIter => "max_iter",
            QpStatus::Infeasible => "infeasible",
        })
    }
}

/// Absolute KKT violations of a primal-dual pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    /// `‖Pw + q + Gᵀλ‖∞`
    pub stationarity: f64,
    /// `max(0, max_i (Gw − h)_i)`
    pub primal: f64,
    /// `max(0, max_i −λ_i)`
    pub dual: f64,
    /// `max_i |λ_i (Gw − h)_i|`
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

pub fn kkt_residuals(qp: &QpProblem, w: &DVector<f64>, lambda: &DVector<f64>) -> KktResiduals {
    let stat = &qp.p * w + &qp.q + qp.g.transpose() * lambda;
    let slack = &qp.g * w - &qp.h;
    KktResiduals {
        stationarity: stat.amax(),
        primal: slack.iter().fold(0.0, |m, v| m.max(*v)),
        dual: lambda.iter().fold(0.0, |m, v| m.max(-*v)),
        complementarity: slack.iter().zip(lambda.iter()).fold(0.0, |m, (s, l)| m.max((s * l).abs())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub w: DVector<f64>,
    pub lambda: DVector<f64>,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub polished: bool,
}

impl QpSolution {
    /// Indices with a positive multiplier.
    pub fn active_set(&self, threshold: f64) -> Vec<usize> {
        (0..self.lambda.len()).filter(|&i| self.lambda[i] > threshold).collect()
    }
}

/// Primal and dual starting point.
#[derive(Clone, Debug, PartialEq)]
pub struct WarmStart {
    pub w: DVector<f64>,
    pub lambda: DVector<f64>,
}

struct Scaled {
    p: DMatrix<f64>,
    q: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn ruiz(qp: &QpProblem, iters: usize) -> Scaled {
    let (n, m) = (qp.n(), qp.n_ineq());
    let mut p = qp.p.clone();
    let mut q = qp.q.clone();
    let mut g = qp.g.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let clamp = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    for _ in 0..iters {
        let dd = DVector::from_fn(n, |j, _| {
            let col = p.column(j).amax().max(if m > 0 { g.column(j).amax() } else { 0.0 });
            1.0 / clamp(col).sqrt()
        });
        let ee = DVector::from_fn(m, |i, _| 1.0 / clamp(g.row(i).amax()).sqrt());
        for r in 0..n {
            for c in 0..n {
                p[(r, c)] *= dd[r] * dd[c];
            }
        }
        for r in 0..m {
            for c in 0..n {
                g[(r, c)] *= ee[r] * dd[c];
            }
        }
        q.component_mul_assign(&dd);
        d.component_mul_assign(&dd);
        e.component_mul_assign(&ee);
    }
    let mean_col = if n > 0 { (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n as f64 } else { 1.0 };
    let c = 1.0 / clamp(mean_col.max(q.amax()));
    p *= c;
    q *= c;
    let h = qp.h.component_mul(&e);
    Scaled { p, q, g, h, d, e, c }
}

fn factor(s: &Scaled, sigma: f64, rho: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = s.p.nrows();
    let mut k = s.p.clone();
    if s.g.nrows() > 0 {
        k.gemm_tr(rho, &s.g, &s.g, 1.0);
    }
    for i in 0..n {
        k[(i, i)] += sigma;
    }
    k.cholesky().ok_or(Error::NotPositiveDefinite("ADMM system matrix"))
}

/// Solves `[P Gᵀ; G −δI]`-regularized KKT system on the active rows and
/// refines against the exact system.
fn polish(qp: &QpProblem, active: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
    let (n, k) = (qp.n(), active.len());
    let delta = 1e-11 * qp.p.amax().max(1.0);
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    for (a, &i) in active.iter().enumerate() {
        for c in 0..n {
            kkt[(n + a, c)] = qp.g[(i, c)];
            kkt[(c, n + a)] = qp.g[(i, c)];
        }
    }
    let mut exact = kkt.clone();
    for a in 0..k {
        kkt[(n + a, n + a)] = -delta;
        exact[(n + a, n + a)] = 0.0;
    }
    let rhs = DVector::from_fn(n + k, |r, _| if r < n { -qp.q[r] } else { qp.h[active[r - n]] });
    let lu = kkt.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..5 {
        let res = &rhs - &exact * &sol;
        sol += lu.solve(&res)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let w = sol.rows(0, n).into_owned();
    let mut lambda = DVector::zeros(qp.n_ineq());
    for (a, &i) in active.iter().enumerate() {
        lambda[i] = sol[n + a];
    }
    Some((w, lambda))
}

/// Rows whose multiplier exceeds their slack, strongest first and at most
/// `n` of them, so the polishing system stays square-solvable at degenerate
/// vertices.
fn guess_active(qp: &QpProblem, w: &DVector<f64>, lambda: &DVector<f64>) -> Vec<usize> {
    let slack = &qp.h - &qp.g * w;
    let mut rows: Vec<(usize, f64)> = (0..qp.n_ineq())
        .map(|i| (i, lambda[i] - slack[i]))
        .filter(|(_, m)| *m > 0.0)
        .collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    rows.truncate(qp.n());
    let mut active: Vec<usize> = rows.into_iter().map(|(i, _)| i).collect();
    active.sort_unstable();
    active
}

/// Polishes on `active`, then repairs the set by dropping the most negative
/// multiplier or adding the most violated row, a bounded number of times.
fn polish_with_repair(qp: &QpProblem, mut active: Vec<usize>, tol: f64) -> Option<(DVector<f64>, DVector<f64>)> {
    let limit = 2 * qp.n_ineq().min(4 * qp.n() + 8);
    for _ in 0..=limit {
        let (w, lambda) = polish(qp, &active)?;
        if kkt_residuals(qp, &w, &lambda).max() <= tol {
            return Some((w, lambda));
        }
        let (neg_i, _) = active
            .iter()
            .map(|&i| (i, lambda[i]))
            .fold((usize::MAX, -tol), |best, (i, v)| if v < best.1 { (i, v) } else { best });
        if neg_i != usize::MAX {
            active.retain(|&i| i != neg_i);
            continue;
        }
        let slack = &qp.g * &w - &qp.h;
        let (viol_i, _) = (0..qp.n_ineq())
            .filter(|i| !active.contains(i))
            .map(|i| (i, slack[i]))
            .fold((usize::MAX, tol), |best, (i, v)| if v > best.1 { (i, v) } else { best });
        if viol_i == usize::MAX {
            return None;
        }
        active.push(viol_i);
        active.sort_unstable();
    }
    None
}

/// Dual active-set method (Goldfarb–Idnani). Starts from the unconstrained
/// minimizer and adds the most violated row each round while keeping the
/// multipliers non-negative; rows linearly dependent on the working set push
/// other rows out. Used when ADMM and polishing fail to certify a point.
fn dual_active_set(qp: &QpProblem, tol: f64) -> Option<(DVector<f64>, DVector<f64>)> {
    let (n, m) = (qp.n(), qp.n_ineq());
    let chol = qp.p.clone().cholesky()?;
    let l = chol.l();
    let mut w = chol.solve(&(-&qp.q));
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let add_tol = 1e-3 * tol;
    let l_solve = |v: &DVector<f64>| l.solve_lower_triangular(v).expect("cholesky factor is nonsingular");

    for _ in 0..10 * (n + m) + 10 {
        let viol = &qp.g * &w - &qp.h;
        let p = (0..m)
            .filter(|i| !active.contains(i))
            .fold(None, |best: Option<(usize, f64)>, i| match best {
                Some((_, v)) if v >= viol[i] => best,
                _ if viol[i] > add_tol => Some((i, viol[i])),
                _ => best,
            });
        let Some((p, _)) = p else {
            let mut lambda = DVector::zeros(m);
            for (&i, &ui) in active.iter().zip(&u) {
                lambda[i] = ui;
            }
            return Some((w, lambda));
        };
        let np = qp.g.row(p).transpose();
        let d = l_solve(&np);
        let mut u_p = 0.0;
        loop {
            let k = active.len();
            let (z, r) = if k == 0 {
                (l.tr_solve_lower_triangular(&d)?, DVector::zeros(0))
            } else {
                let mut b = DMatrix::zeros(n, k);
                for (c, &i) in active.iter().enumerate() {
                    b.set_column(c, &l_solve(&qp.g.row(i).transpose()));
                }
                let qr = b.qr();
                let (q1, rr) = (qr.q(), qr.r());
                let qtd = q1.transpose() * &d;
                let proj = &d - &q1 * &qtd;
                let r = rr.solve_upper_triangular(&qtd)?;
                (l.tr_solve_lower_triangular(&proj)?, r)
            };
            // partial step: the largest move keeping working multipliers >= 0
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for j in 0..k {
                if r[j] > 1e-14 {
                    let t = u[j] / r[j];
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let curv = z.dot(&np);
            let s_p = np.dot(&w) - qp.h[p];
            let t2 = if z.amax() > 1e-14 * (1.0 + np.amax()) && curv > 0.0 { s_p / curv } else { f64::INFINITY };
            let t = t1.min(t2);
            if !t.is_finite() {
                return None;
            }
            w -= &z * t;
            for j in 0..k {
                u[j] -= t * r[j];
            }
            u_p += t;
            if t2 <= t1 {
                active.push(p);
                u.push(u_p);
                break;
            }
            let j = drop.expect("finite partial step has a blocking row");
            active.remove(j);
            u.remove(j);
        }
    }
    None
}

/// Iterations between polishing attempts before ADMM reaches its own
/// tolerance.
const POLISH_EVERY: usize = 200;

pub fn solve(qp: &QpProblem, settings: &QpSettings, warm: Option<&WarmStart>) -> Result<QpSolution> {
    qp.validate()?;
    let (n, m) = (qp.n(), qp.n_ineq());
    if qp.p.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("QP cost matrix"));
    }
    if m == 0 {
        let w = qp.p.clone().cholesky().expect("checked above").solve(&(-&qp.q));
        let lambda = DVector::zeros(0);
        let kkt = kkt_residuals(qp, &w, &lambda);
        return Ok(QpSolution {
            w,
            lambda,
            status: QpStatus::Solved,
            kkt,
            iterations: 0,
            polished: false,
        });
    }

    let s = ruiz(qp, settings.scaling_iters);
    let mut rho = settings.rho;
    let mut chol = factor(&s, settings.sigma, rho)?;

    // scaled iterates
    let (mut x, mut y) = match warm {
        Some(ws) if ws.w.len() == n && ws.lambda.len() == m => (
            ws.w.component_div(&s.d),
            ws.lambda.component_div(&s.e) * s.c,
        ),
        _ => (DVector::zeros(n), DVector::zeros(m)),
    };
    let mut z = (&s.g * &x).zip_map(&s.h, f64::min);
    let mut y_prev = y.clone();
    let mut admm_eps = (settings.tol * 10.0).max(1e-9);
    let tol = settings.tol;

    let unscale = |x: &DVector<f64>, y: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        (x.component_mul(&s.d), y.component_mul(&s.e) / s.c)
    };

    let check_every = 10;
    let mut best: Option<(DVector<f64>, DVector<f64>, f64)> = None;
    for it in 1..=settings.max_iter {
        let rhs = &x * settings.sigma - &s.q + s.g.transpose() * (&z * rho - &y);
        let x_t = chol.solve(&rhs);
        let z_t = &s.g * &x_t;
        let x_new = &x_t * settings.alpha + &x * (1.0 - settings.alpha);
        let z_relax = &z_t * settings.alpha + &z * (1.0 - settings.alpha);
        let v = &z_relax + &y / rho;
        let z_new = v.zip_map(&s.h, f64::min);
        y_prev.copy_from(&y);
        y += (&z_relax - &z_new) * rho;
        x = x_new;
        z = z_new;

        if it % check_every != 0 && it != settings.max_iter {
            continue;
        }
        let einv = s.e.map(|v| 1.0 / v);
        let dinv = s.d.map(|v| 1.0 / v);
        let gx = &s.g * &x;
        let r_prim = (&gx - &z).component_mul(&einv).amax();
        let px = &s.p * &x;
        let gty = s.g.transpose() * &y;
        let r_dual = (&px + &s.q + &gty).component_mul(&dinv).amax() / s.c;
        let prim_scale = gx.component_mul(&einv).amax().max(z.component_mul(&einv).amax());
        let dual_scale = px
            .component_mul(&dinv)
            .amax()
            .max(gty.component_mul(&dinv).amax())
            .max(s.q.component_mul(&dinv).amax())
            / s.c;

        // primal infeasibility certificate
        let dy = &y - &y_prev;
        let dy_u = dy.component_mul(&s.e);
        let dy_norm = dy_u.amax();
        if dy_norm > 1e-12 {
            let eps = 1e-5;
            let gt = (s.g.transpose() * &dy).component_mul(&dinv).amax();
            let support: f64 = qp.h.iter().zip(dy_u.iter()).map(|(h, d)| h * d.max(0.0)).sum();
            let min_dy = dy_u.min();
            if gt <= eps * dy_norm && support < -eps * dy_norm && min_dy >= -eps * dy_norm {
                let (w, lambda) = unscale(&x, &y);
                let kkt = kkt_residuals(qp, &w, &lambda);
                return Ok(QpSolution {
                    w,
                    lambda,
                    status: QpStatus::Infeasible,
                    kkt,
                    iterations: it,
                    polished: false,
                });
            }
        }

        let converged = r_prim <= admm_eps * (1.0 + prim_scale) && r_dual <= admm_eps * (1.0 + dual_scale);
        if converged {
            let (w, lambda) = unscale(&x, &y);
            let kkt = kkt_residuals(qp, &w, &lambda);
            if kkt.max() <= tol {
                return Ok(QpSolution {
                    w,
                    lambda,
                    status: QpStatus::Solved,
                    kkt,
                    iterations: it,
                    polished: false,
                });
            }
            if settings.polish {
                if let Some((pw, pl)) = polish_with_repair(qp, guess_active(qp, &w, &lambda), tol) {
                    let kkt = kkt_residuals(qp, &pw, &pl);
                    return Ok(QpSolution {
                        w: pw,
                        lambda: pl,
                        status: QpStatus::Solved,
                        kkt,
                        iterations: it,
                        polished: true,
                    });
                }
            }
            if best.as_ref().map_or(true, |b| kkt.max() < b.2) {
                best = Some((w, lambda, kkt.max()));
            }
            admm_eps = (admm_eps * 0.1).max(1e-13);
        } else if settings.polish && it % POLISH_EVERY == 0 {
            let (w, lambda) = unscale(&x, &y);
            if let Some((pw, pl)) = polish_with_repair(qp, guess_active(qp, &w, &lambda), tol) {
                let kkt = kkt_residuals(qp, &pw, &pl);
                return Ok(QpSolution {
                    w: pw,
                    lambda: pl,
                    status: QpStatus::Solved,
                    kkt,
                    iterations: it,
                    polished: true,
                });
            }
        }

        // residual balancing
        let ratio = ((r_prim / prim_scale.max(1e-12)) / (r_dual / dual_scale.max(1e-12)).max(1e-300)).sqrt();
        if ratio.is_finite() && ratio > 0.0 {
            let new_rho = (rho * ratio).clamp(1e-6, 1e6);
            if new_rho > 5.0 * rho || new_rho < rho / 5.0 {
                rho = new_rho;
                chol = factor(&s, settings.sigma, rho)?;
            }
        }
    }

    let (w, lambda) = match best {
        Some((w, l, _)) => (w, l),
        None => unscale(&x, &y),
    };
    let (w, lambda, polished) = if settings.polish {
        match polish_with_repair(qp, guess_active(qp, &w, &lambda), tol) {
            Some((pw, pl)) => (pw, pl, true),
            None => (w, lambda, false),
        }
    } else {
        (w, lambda, false)
    };
    let mut kkt = kkt_residuals(qp, &w, &lambda);
    let (mut w, mut lambda) = (w, lambda);
    if kkt.max() > tol {
        if let Some((dw, dl)) = dual_active_set(qp, tol) {
            let dk = kkt_residuals(qp, &dw, &dl);
            if dk.max() < kkt.max() {
                (w, lambda, kkt) = (dw, dl, dk);
            }
        }
    }
    let status = if kkt.max() <= tol { QpStatus::Solved } else { QpStatus::MaxIter };
    Ok(QpSolution {
        w,
        lambda,
        status,
        kkt,
        iterations: settings.max_iter,
        polished,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn unconstrained_closed_form() {
        let qp = QpProblem::unconstrained(DMatrix::identity(2, 2), dvector![-1.0, -2.0]).unwrap();
        let sol = solve(&qp, &QpSettings::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.w - dvector![1.0, 2.0]).amax() < 1e-12);
    }

    #[test]
    fn halfspace_projection() {
        let qp = QpProblem::new(DMatrix::identity(2, 2), dvector![0.0, 0.0], dmatrix![1.0, 0.0], dvector![-1.0]).unwrap();
        let sol = solve(&qp, &QpSettings::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.w.clone() - dvector![-1.0, 0.0]).amax() < 1e-8);
        assert!((sol.lambda[0] - 1.0).abs() < 1e-8);
        assert!(sol.kkt.max() <= 1e-6);
    }

    #[test]
    fn infeasible_problem_is_reported() {
        let qp = QpProblem::new(
            DMatrix::identity(2, 2),
            dvector![0.0, 0.0],
            dmatrix![1.0, 0.0; -1.0, 0.0],
            dvector![-1.0, -1.0],
        )
        .unwrap();
        let sol = solve(&qp, &QpSettings::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn indefinite_cost_is_rejected() {
        let qp = QpProblem::unconstrained(dmatrix![1.0, 0.0; 0.0, -1.0], dvector![0.0, 0.0]).unwrap();
        assert!(matches!(solve(&qp, &QpSettings::default(), None), Err(Error::NotPositiveDefinite(_))));
        let asym = QpProblem::unconstrained(dmatrix![1.0, 0.5; 0.0, 1.0], dvector![0.0, 0.0]);
        assert!(asym.is_err());
    }

    #[test]
    fn warm_start_from_solution_is_immediate() {
        let qp = QpProblem::new(
            dmatrix![2.0, 0.5; 0.5, 1.0],
            dvector![1.0, -1.0],
            dmatrix![1.0, 1.0; -1.0, 0.0],
            dvector![0.5, 0.2],
        )
        .unwrap();
        let cold = solve(&qp, &QpSettings::default(), None).unwrap();
        let warm = solve(
            &qp,
            &QpSettings::default(),
            Some(&WarmStart {
                w: cold.w.clone(),
                lambda: cold.lambda.clone(),
            }),
        )
        .unwrap();
        assert_eq!(warm.status, QpStatus::Solved);
        assert!(warm.iterations <= cold.iterations);
        assert!((warm.w - cold.w).amax() < 1e-6);
    }

    #[test]
    fn dual_active_set_agrees_with_admm() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let (n, m) = (6, 15);
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let p = a.transpose() * &a + DMatrix::identity(n, n) * 0.5;
            let q = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            let g = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
            let h = DVector::from_fn(m, |_, _| rng.gen_range(0.0..1.0));
            let qp = QpProblem::new(p, q, g, h).unwrap();
            let (w, lambda) = dual_active_set(&qp, 1e-6).unwrap();
            assert!(kkt_residuals(&qp, &w, &lambda).max() <= 1e-9);
            let admm = solve(&qp, &QpSettings::default(), None).unwrap();
            assert!((admm.w - w).amax() <= 1e-6);
        }
    }
}
