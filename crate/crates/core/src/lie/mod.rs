//! Exact directional derivatives of scalar fields along control-affine vector
//! fields.
//!
//! Scalar fields are expressions over the state vector. A Lie derivative
//! `∇φ · v` is formed by differentiating `φ` node by node with the dual-number
//! rules and contracting with the field `v`; the result is again an expression,
//! so chains of any depth can be built. Values and gradients are evaluated by a
//! compiled [`Tape`] in forward mode, with no finite differencing anywhere.

mod expr;
mod tape;

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use expr::{Expr, MAX_VARS};
pub use tape::Tape;

/// A scalar function of the state supporting exact value-and-gradient
/// evaluation.
#[derive(Clone)]
pub struct ScalarField {
    expr: Expr,
    tape: Arc<OnceLock<Tape>>,
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ScalarField({})", self.expr)
    }
}

impl From<Expr> for ScalarField {
    fn from(expr: Expr) -> Self {
        ScalarField::new(expr)
    }
}

impl ScalarField {
    pub fn new(expr: Expr) -> Self {
        ScalarField {
            expr,
            tape: Arc::new(OnceLock::new()),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(Expr::constant(c))
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    /// `Some(c)` when the field folded to the constant `c`.
    pub fn as_const(&self) -> Option<f64> {
        self.expr.as_const()
    }

    fn tape(&self, n_vars: usize) -> &Tape {
        let tape = self
            .tape
            .get_or_init(|| Tape::compile(std::slice::from_ref(&self.expr), highest_var(&self.expr) + 1));
        assert!(tape.n_vars() <= n_vars.max(1), "point too short for field");
        tape
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.tape(x.len()).eval(x)[0]
    }

    /// Value and the full gradient (length `x.len()`).
    pub fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let tape = self.tape(x.len());
        let (v, g) = tape.eval_with_gradient(&x[..tape.n_vars()]);
        let mut grad = vec![0.0; x.len()];
        grad[..tape.n_vars()].copy_from_slice(&g[0]);
        (v[0], grad)
    }
}

fn highest_var(e: &Expr) -> usize {
    let m = e.var_mask();
    if m == 0 {
        0
    } else {
        63 - m.leading_zeros() as usize
    }
}

/// `ẋ = f(x) + Σ_j g_j(x) u_j`, `y = h(x)`.
#[derive(Clone, Debug)]
pub struct ControlAffineSystem {
    n_x: usize,
    drift: Vec<ScalarField>,
    control: Vec<Vec<ScalarField>>,
    output: Vec<ScalarField>,
    compiled: Arc<OnceLock<Tape>>,
}

fn check_vars(fields: &[ScalarField], n_x: usize) -> Result<()> {
    for f in fields {
        if n_x < 64 && f.expr.var_mask() >> n_x != 0 {
            return Err(Error::invalid(format!(
                "field {} references a variable beyond n_x = {n_x}",
                f.expr
            )));
        }
    }
    Ok(())
}

impl ControlAffineSystem {
    /// `control[j]` is the vector field multiplying input `j`.
    pub fn new(
        n_x: usize,
        drift: Vec<ScalarField>,
        control: Vec<Vec<ScalarField>>,
        output: Vec<ScalarField>,
    ) -> Result<Self> {
        if n_x == 0 || n_x > MAX_VARS {
            return Err(Error::invalid(format!("state dimension {n_x} out of range")));
        }
        if drift.len() != n_x {
            return Err(Error::dim("drift field", n_x, drift.len()));
        }
        for g in &control {
            if g.len() != n_x {
                return Err(Error::dim("control field", n_x, g.len()));
            }
        }
        check_vars(&drift, n_x)?;
        for g in &control {
            check_vars(g, n_x)?;
        }
        check_vars(&output, n_x)?;
        Ok(ControlAffineSystem {
            n_x,
            drift,
            control,
            output,
            compiled: Arc::new(OnceLock::new()),
        })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.control.len()
    }

    pub fn n_y(&self) -> usize {
        self.output.len()
    }

    pub fn drift(&self) -> &[ScalarField] {
        &self.drift
    }

    pub fn control(&self, j: usize) -> &[ScalarField] {
        &self.control[j]
    }

    pub fn output(&self) -> &[ScalarField] {
        &self.output
    }

    // layout: drift (n_x), control fields (m * n_x), output (n_y)
    fn compiled(&self) -> &Tape {
        self.compiled.get_or_init(|| {
            let roots: Vec<Expr> = self
                .drift
                .iter()
                .chain(self.control.iter().flatten())
                .chain(self.output.iter())
                .map(|f| f.expr.clone())
                .collect();
            Tape::compile(&roots, self.n_x)
        })
    }

    /// `f(x) + Σ g_j(x) u_j`.
    pub fn rhs(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let v = self.compiled().eval(x);
        let n = self.n_x;
        (0..n)
            .map(|i| v[i] + (0..self.n_u()).map(|j| v[n + j * n + i] * u[j]).sum::<f64>())
            .collect()
    }

    pub fn eval_output(&self, x: &[f64]) -> Vec<f64> {
        let v = self.compiled().eval(x);
        v[self.n_x * (1 + self.n_u())..].to_vec()
    }

    /// Continuous-time Jacobians `(∂F/∂x, ∂F/∂u)` of `F(x,u) = f + Σ g_j u_j`
    /// together with `F(x,u)` itself.
    pub fn linearize(&self, x: &[f64], u: &[f64]) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (n, m) = (self.n_x, self.n_u());
        let (v, g) = self.compiled().eval_with_gradient(x);
        let mut jx = DMatrix::zeros(n, n);
        let mut ju = DMatrix::zeros(n, m);
        let mut f = DVector::zeros(n);
        for i in 0..n {
            f[i] = v[i];
            for k in 0..n {
                jx[(i, k)] = g[i][k];
            }
            for j in 0..m {
                let idx = n + j * n + i;
                f[i] += v[idx] * u[j];
                ju[(i, j)] = v[idx];
                for k in 0..n {
                    jx[(i, k)] += g[idx][k] * u[j];
                }
            }
        }
        (f, jx, ju)
    }

    /// Output value and Jacobian `∂h/∂x`.
    pub fn output_jacobian(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let (n, m) = (self.n_x, self.n_u());
        let off = n * (1 + m);
        let (v, g) = self.compiled().eval_with_gradient(x);
        let ny = self.n_y();
        let y = DVector::from_iterator(ny, v[off..].iter().copied());
        let jac = DMatrix::from_fn(ny, n, |r, c| g[off + r][c]);
        (y, jac)
    }
}

/// `x ↦ ∇φ(x) · field(x)`.
pub fn lie_derivative(phi: &ScalarField, field: &[ScalarField]) -> Result<ScalarField> {
    let n = field.len();
    if n < 64 && phi.expr.var_mask() >> n != 0 {
        return Err(Error::dim("lie derivative", highest_var(&phi.expr) + 1, n));
    }
    let mut acc = Expr::zero();
    for (k, fk) in field.iter().enumerate() {
        if fk.expr.is_zero() || !phi.expr.depends_on(k) {
            continue;
        }
        let mut memo = HashMap::new();
        let d = phi.expr.diff_memo(k, &mut memo);
        acc = acc.add(&d.mul(&fk.expr));
    }
    Ok(ScalarField::new(acc))
}

/// One level of chain expansion: every input field `λ` produces
/// `[∇λ·f, ∇λ·g_1, …, ∇λ·g_m]`, in that order.
pub fn expand_level(fields: &[ScalarField], sys: &ControlAffineSystem) -> Vec<ScalarField> {
    let mut out = Vec::with_capacity(fields.len() * (sys.n_u() + 1));
    for lam in fields {
        // dimensions are validated at system construction
        out.push(lie_derivative(lam, &sys.drift).expect("validated dimensions"));
        for g in &sys.control {
            out.push(lie_derivative(lam, g).expect("validated dimensions"));
        }
    }
    out
}
