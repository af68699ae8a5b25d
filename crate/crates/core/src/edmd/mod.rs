//! Least-squares identification of the lifted bilinear model.
//!
//! The regression maps features `ψ(x_k, u_k)` to lifted successors
//! `ψ_x(x_{k+1})`. Only the Gram matrix `ΨᵀΨ` and the cross term `ΨᵀY` are
//! kept, accumulated chunk by chunk, so memory does not grow with the number of
//! transitions.

mod data;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bilinear::BilinearModel;
use crate::error::{Error, Result};
use crate::lifting::LiftingBasis;

pub use data::{generate_dataset, DataGenConfig, Dataset, DatasetMeta};

/// Relative ridge used when none is given: `λ = REL · trace(ΨᵀΨ) / dim`.
pub const DEFAULT_RELATIVE_RIDGE: f64 = 1e-8;

/// Running sums `ΨᵀΨ` and `ΨᵀY`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramAccumulator {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    count: usize,
}

impl GramAccumulator {
    pub fn new(features: usize, targets: usize) -> Self {
        GramAccumulator {
            gram: DMatrix::zeros(features, features),
            cross: DMatrix::zeros(features, targets),
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn cross(&self) -> &DMatrix<f64> {
        &self.cross
    }

    /// Adds samples stored one per row.
    pub fn add_rows(&mut self, features: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<()> {
        if features.ncols() != self.gram.nrows() {
            return Err(Error::dim("feature columns", self.gram.nrows(), features.ncols()));
        }
        if targets.ncols() != self.cross.ncols() || targets.nrows() != features.nrows() {
            return Err(Error::dim("target matrix", self.cross.ncols(), targets.ncols()));
        }
        self.gram.gemm_tr(1.0, features, features, 1.0);
        self.cross.gemm_tr(1.0, features, targets, 1.0);
        self.count += features.nrows();
        Ok(())
    }

    pub fn merge(&mut self, other: &GramAccumulator) {
        self.gram += &other.gram;
        self.cross += &other.cross;
        self.count += other.count;
    }

    /// The ridge actually applied for `ridge` (`None` selects the default).
    pub fn effective_ridge(&self, ridge: Option<f64>) -> f64 {
        ridge.unwrap_or_else(|| DEFAULT_RELATIVE_RIDGE * self.gram.trace() / self.gram.nrows().max(1) as f64)
    }

    /// Minimizes `‖Ψ Gᵀ − Y‖² + λ‖G‖²` and returns `G` (targets × features).
    pub fn solve(&self, ridge: Option<f64>) -> Result<DMatrix<f64>> {
        let lambda = self.effective_ridge(ridge);
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("ridge must be finite and non-negative, got {lambda}")));
        }
        let p = self.gram.nrows();
        let mut s = self.gram.clone();
        for i in 0..p {
            s[(i, i)] += lambda;
        }
        // Jacobi scaling: solve (DSD)(D⁻¹X) = DC, which has the same solution
        // with a unit diagonal.
        let mut d = DVector::zeros(p);
        for i in 0..p {
            if !(s[(i, i)] > 0.0) {
                return Err(Error::RankDeficient);
            }
            d[i] = 1.0 / s[(i, i)].sqrt();
        }
        for r in 0..p {
            for c in 0..p {
                s[(r, c)] *= d[r] * d[c];
            }
        }
        let mut rhs = self.cross.clone();
        for r in 0..p {
            rhs.row_mut(r).scale_mut(d[r]);
        }
        let chol = s.cholesky().ok_or(Error::RankDeficient)?;
        if lambda == 0.0 {
            let l = chol.l_dirty();
            let min_pivot = (0..p).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            if min_pivot < 1e-13 {
                return Err(Error::RankDeficient);
            }
        }
        let mut x = chol.solve(&rhs);
        for r in 0..p {
            x.row_mut(r).scale_mut(d[r]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("regression produced non-finite coefficients".into()));
        }
        Ok(x.transpose())
    }
}

const CHUNK_TRAJECTORIES: usize = 50;

/// Accumulates the regression sums over `dataset` in a fixed chunk order.
pub fn accumulate(dataset: &Dataset, basis: &LiftingBasis) -> Result<GramAccumulator> {
    if dataset.is_empty() {
        return Err(Error::invalid("dataset has no transitions"));
    }
    let n = basis.n();
    let fdim = basis.feature_dim();
    let chunks: Vec<std::ops::Range<usize>> = (0..dataset.trajectories())
        .step_by(CHUNK_TRAJECTORIES)
        .map(|s| s..(s + CHUNK_TRAJECTORIES).min(dataset.trajectories()))
        .collect();
    let partials: Vec<Result<GramAccumulator>> = chunks
        .into_par_iter()
        .map(|range| {
            let rows = range.len() * dataset.steps();
            let mut feats = DMatrix::zeros(rows, fdim);
            let mut targs = DMatrix::zeros(rows, n);
            let mut scratch = Vec::new();
            let mut lifted = vec![vec![0.0; n]; dataset.steps() + 1];
            let mut frow = vec![0.0; fdim];
            let mut r = 0;
            for t in range {
                let (xs, us) = dataset.trajectory(t);
                for (x, z) in xs.iter().zip(lifted.iter_mut()) {
                    basis.eval_psi_x_into(&x.to_array(), &mut scratch, z);
                }
                for (k, u) in us.iter().enumerate() {
                    basis.features_from_lifted(&lifted[k], &u.to_array(), &mut frow);
                    for (c, v) in frow.iter().enumerate() {
                        feats[(r, c)] = *v;
                    }
                    for (c, v) in lifted[k + 1].iter().enumerate() {
                        targs[(r, c)] = *v;
                    }
                    r += 1;
                }
            }
            if feats.iter().chain(targs.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numerical("non-finite lifted features in dataset".into()));
            }
            let mut acc = GramAccumulator::new(fdim, n);
            acc.add_rows(&feats, &targs)?;
            Ok(acc)
        })
        .collect();
    let mut total = GramAccumulator::new(fdim, n);
    for p in partials {
        total.merge(&p?);
    }
    Ok(total)
}

/// Fits `[A, H_1, …, H_m, B]` over `basis` and returns the bilinear model.
pub fn fit(dataset: &Dataset, basis: &LiftingBasis, ridge: Option<f64>) -> Result<BilinearModel> {
    if basis.n_u() != crate::plant::N_INPUT || basis.n_x() != crate::plant::N_STATE {
        return Err(Error::dim("basis input dimension", crate::plant::N_INPUT, basis.n_u()));
    }
    let acc = accumulate(dataset, basis)?;
    let g = acc.solve(ridge)?;
    BilinearModel::from_blocks(&g, basis.n_u(), basis.n_y(), dataset.meta.ts, basis.rho(), basis.manifest_hash())
}

/// One-step prediction errors of a fitted model on held-out data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub transitions: usize,
    /// RMS over tractor and trailer position outputs (m).
    pub one_step_rms_position: f64,
    /// RMS over both heading outputs (rad).
    pub one_step_rms_heading: f64,
    /// RMS over the whole lifted state.
    pub one_step_rms_lifted: f64,
}

pub fn validate(model: &BilinearModel, basis: &LiftingBasis, dataset: &Dataset) -> Result<Validation> {
    model.check_basis(basis)?;
    let (mut pos, mut head, mut lifted) = (0.0, 0.0, 0.0);
    let mut count = 0usize;
    for (x, u, next) in dataset.transitions() {
        let z = basis.eval_psi_x(&x.to_array());
        let pred = model.step(&z, &u.to_array());
        let truth = basis.eval_psi_x(&next.to_array());
        let e = pred - truth;
        for i in [0, 1, 6, 7] {
            pos += e[i] * e[i];
        }
        head += e[2] * e[2] + e[3] * e[3];
        lifted += e.norm_squared();
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("validation set has no transitions"));
    }
    let c = count as f64;
    Ok(Validation {
        transitions: count,
        one_step_rms_position: (pos / (4.0 * c)).sqrt(),
        one_step_rms_heading: (head / (2.0 * c)).sqrt(),
        one_step_rms_lifted: (lifted / (model.n() as f64 * c)).sqrt(),
    })
}
