//! Prediction models the controller can linearize.

use nalgebra::{DMatrix, DVector};

use crate::bilinear::BilinearModel;
use crate::error::{Error, Result};
use crate::lie::ControlAffineSystem;
use crate::lifting::LiftingBasis;
use crate::plant::{tractor_trailer_system, PlantParams, State, N_INPUT, N_OUTPUT, N_STATE};

/// Discrete-time model `z⁺ = f(z, u)`, `y = h(z)`.
///
/// `step` must agree with the linearization at its own point:
/// `f(ẑ, û) = Â ẑ + B̂ û + c` for the affine model the controller builds, so
/// the condensation residual is `d_k = f(ẑ_k, û_k) − ẑ_{k+1}`.
pub trait Predictor {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn lift(&self, x: &State) -> DVector<f64>;
    fn step(&self, z: &DVector<f64>, u: &[f64]) -> DVector<f64>;
    /// `(∂f/∂z, ∂f/∂u)` at `(z, u)`.
    fn jacobians(&self, z: &DVector<f64>, u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>);
    /// `h(z)` and `∂h/∂z`.
    fn output(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);
}

pub struct BilinearPredictor<'a> {
    model: &'a BilinearModel,
    basis: &'a LiftingBasis,
}

impl<'a> BilinearPredictor<'a> {
    pub fn new(model: &'a BilinearModel, basis: &'a LiftingBasis) -> Result<Self> {
        model.check_basis(basis)?;
        if model.m() != N_INPUT || model.n_y() != N_OUTPUT {
            return Err(Error::dim("bilinear model outputs", N_OUTPUT, model.n_y()));
        }
        Ok(BilinearPredictor { model, basis })
    }

    pub fn model(&self) -> &BilinearModel {
        self.model
    }
}

impl Predictor for BilinearPredictor<'_> {
    fn state_dim(&self) -> usize {
        self.model.n()
    }

    fn input_dim(&self) -> usize {
        self.model.m()
    }

    fn output_dim(&self) -> usize {
        self.model.n_y()
    }

    fn lift(&self, x: &State) -> DVector<f64> {
        self.basis.eval_psi_x(&x.to_array())
    }

    fn step(&self, z: &DVector<f64>, u: &[f64]) -> DVector<f64> {
        self.model.step(z, u)
    }

    fn jacobians(&self, z: &DVector<f64>, u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let lin = self.model.linearize(z, u);
        (lin.a_hat, lin.b_hat)
    }

    fn output(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (self.model.output(z), self.model.c.clone())
    }
}

/// The slip-free plant stepped by forward Euler.
pub struct NominalPredictor {
    system: ControlAffineSystem,
    ts: f64,
}

impl NominalPredictor {
    pub fn new(geometry: &PlantParams, ts: f64) -> Result<Self> {
        geometry.validate()?;
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(Error::invalid(format!("sampling time must be positive, got {ts}")));
        }
        Ok(NominalPredictor {
            system: tractor_trailer_system(&geometry.nominal()),
            ts,
        })
    }
}

impl Predictor for NominalPredictor {
    fn state_dim(&self) -> usize {
        N_STATE
    }

    fn input_dim(&self) -> usize {
        N_INPUT
    }

    fn output_dim(&self) -> usize {
        N_OUTPUT
    }

    fn lift(&self, x: &State) -> DVector<f64> {
        DVector::from_column_slice(&x.to_array())
    }

    fn step(&self, z: &DVector<f64>, u: &[f64]) -> DVector<f64> {
        z + DVector::from_vec(self.system.rhs(z.as_slice(), u)) * self.ts
    }

    fn jacobians(&self, z: &DVector<f64>, u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let (_, jx, ju) = self.system.linearize(z.as_slice(), u);
        (DMatrix::identity(N_STATE, N_STATE) + jx * self.ts, ju * self.ts)
    }

    fn output(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        self.system.output_jacobian(z.as_slice())
    }
}
