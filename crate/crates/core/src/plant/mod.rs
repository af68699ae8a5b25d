//! Tractor-trailer kinematics with longitudinal and side slip.
//!
//! State `[x0, y0, θ0, θ1, tan φ, v]`, input `[ω, a]` where `ω` is the rate of
//! `tan φ` and `a` the acceleration. The slip factors `μ` (longitudinal) and
//! `κ` (side) scale the velocity and the steering angle:
//!
//! ```text
//! ẋ0 = μ v cos θ0
//! ẏ0 = μ v sin θ0
//! θ̇0 = μ v tan(κφ) / l0
//! θ̇1 = μ v (sin δθ − tan(κφ) cos δθ · lH / l0) / l1,   δθ = θ0 − θ1
//! ```
//!
//! with `φ = atan(tan φ)`. Headings are stored unwrapped.

mod reference;

use serde::{Deserialize, Serialize};

use crate::lie::{ControlAffineSystem, Expr, ScalarField};

pub use reference::{generate_reference, read_reference_csv, write_reference_csv, Reference, ReferenceProfile, Segment};

pub const N_STATE: usize = 6;
pub const N_INPUT: usize = 2;
pub const N_OUTPUT: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantParams {
    /// Tractor wheelbase (m).
    pub l0: f64,
    /// Trailer length (m).
    pub l1: f64,
    /// Hitch offset (m).
    pub lh: f64,
    /// Longitudinal slip factor.
    pub mu: f64,
    /// Side slip factor.
    pub kappa: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        PlantParams {
            l0: 3.6,
            l1: 6.0,
            lh: 1.0,
            mu: 1.0,
            kappa: 1.0,
        }
    }
}

impl PlantParams {
    /// Same geometry, slip-free.
    pub fn nominal(&self) -> Self {
        PlantParams {
            mu: 1.0,
            kappa: 1.0,
            ..*self
        }
    }

    pub fn with_slip(&self, mu: f64, kappa: f64) -> Self {
        PlantParams { mu, kappa, ..*self }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.l0 > 0.0
            && self.l1 > 0.0
            && self.lh >= 0.0
            && self.mu > 0.0
            && self.mu <= 1.5
            && self.kappa > 0.0
            && self.kappa <= 1.5;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::invalid(format!("plant parameters out of range: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x0: f64,
    pub y0: f64,
    pub theta0: f64,
    pub theta1: f64,
    pub tan_phi: f64,
    pub v: f64,
}

impl State {
    pub fn from_array(a: [f64; N_STATE]) -> Self {
        State {
            x0: a[0],
            y0: a[1],
            theta0: a[2],
            theta1: a[3],
            tan_phi: a[4],
            v: a[5],
        }
    }

    pub fn to_array(&self) -> [f64; N_STATE] {
        [self.x0, self.y0, self.theta0, self.theta1, self.tan_phi, self.v]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::from_array([s[0], s[1], s[2], s[3], s[4], s[5]])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub omega: f64,
    pub a: f64,
}

impl Control {
    pub fn new(omega: f64, a: f64) -> Self {
        Control { omega, a }
    }

    pub fn to_array(&self) -> [f64; N_INPUT] {
        [self.omega, self.a]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Control { omega: s[0], a: s[1] }
    }
}

/// `[x0, y0, θ0, θ1, tan φ, v, x1, y1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Output(pub [f64; N_OUTPUT]);

impl Output {
    pub const NAMES: [&'static str; N_OUTPUT] = ["x0", "y0", "theta0", "theta1", "tan_phi", "v", "x1", "y1"];

    pub fn as_array(&self) -> &[f64; N_OUTPUT] {
        &self.0
    }

    pub fn x0(&self) -> f64 {
        self.0[0]
    }
    pub fn y0(&self) -> f64 {
        self.0[1]
    }
    pub fn theta0(&self) -> f64 {
        self.0[2]
    }
    pub fn theta1(&self) -> f64 {
        self.0[3]
    }
    pub fn tan_phi(&self) -> f64 {
        self.0[4]
    }
    pub fn v(&self) -> f64 {
        self.0[5]
    }
    pub fn x1(&self) -> f64 {
        self.0[6]
    }
    pub fn y1(&self) -> f64 {
        self.0[7]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Limits {
    pub omega_max: f64,
    pub a_max: f64,
    pub tan_phi_max: f64,
    pub v_max: f64,
    pub dtheta_max: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            omega_max: 2.0,
            a_max: 2.0,
            tan_phi_max: 0.6f64.tan(),
            v_max: 1.0,
            dtheta_max: std::f64::consts::FRAC_PI_3,
        }
    }
}

impl Limits {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [self.omega_max, self.a_max, self.tan_phi_max, self.v_max, self.dtheta_max];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(crate::Error::invalid(format!("limits must be positive: {self:?}")))
        }
    }

    pub fn clamp(&self, u: Control) -> Control {
        Control {
            omega: u.omega.clamp(-self.omega_max, self.omega_max),
            a: u.a.clamp(-self.a_max, self.a_max),
        }
    }
}

/// Signed constraint margins; a margin `>= 0` means the bound holds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LimitMargins {
    pub omega: f64,
    pub a: f64,
    pub tan_phi: f64,
    pub v: f64,
    pub dtheta: f64,
}

impl LimitMargins {
    pub fn min(&self) -> f64 {
        [self.omega, self.a, self.tan_phi, self.v, self.dtheta]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn satisfied(&self) -> bool {
        self.min() >= 0.0
    }

    pub fn input_min(&self) -> f64 {
        self.omega.min(self.a)
    }

    pub fn output_min(&self) -> f64 {
        self.tan_phi.min(self.v).min(self.dtheta)
    }
}

pub fn check_limits(y: &Output, u: &Control, lim: &Limits) -> LimitMargins {
    LimitMargins {
        omega: lim.omega_max - u.omega.abs(),
        a: lim.a_max - u.a.abs(),
        tan_phi: lim.tan_phi_max - y.tan_phi().abs(),
        v: lim.v_max - y.v().abs(),
        dtheta: lim.dtheta_max - (y.theta0() - y.theta1()).abs(),
    }
}

pub fn plant_derivative(x: &State, u: &Control, p: &PlantParams) -> [f64; N_STATE] {
    let tk = (p.kappa * x.tan_phi.atan()).tan();
    let d = x.theta0 - x.theta1;
    let (s0, c0) = x.theta0.sin_cos();
    let mv = p.mu * x.v;
    [
        mv * c0,
        mv * s0,
        mv * tk / p.l0,
        mv * (d.sin() - tk * d.cos() * p.lh / p.l0) / p.l1,
        u.omega,
        u.a,
    ]
}

pub fn output_map(x: &State, p: &PlantParams) -> Output {
    // Separate sin and cos calls, as the expression evaluator makes them. The
    // optimizer would otherwise fuse them into sincos, which can differ in the
    // last bit and break the exact output prefix of the lifted state.
    use std::hint::black_box;
    let (s0, c0) = (black_box(x.theta0).sin(), black_box(x.theta0).cos());
    let (s1, c1) = (black_box(x.theta1).sin(), black_box(x.theta1).cos());
    let x1 = x.x0 - p.lh * c0 - p.l1 * c1;
    let y1 = x.y0 - p.lh * s0 - p.l1 * s1;
    Output([x.x0, x.y0, x.theta0, x.theta1, x.tan_phi, x.v, x1, y1])
}

/// Classical RK4 step of `ẋ = f(x)` for fixed-size vectors.
pub fn rk4<const N: usize>(x: &[f64; N], h: f64, f: impl Fn(&[f64; N]) -> [f64; N]) -> [f64; N] {
    let axpy = |a: &[f64; N], s: f64, b: &[f64; N]| -> [f64; N] { std::array::from_fn(|i| a[i] + s * b[i]) };
    let k1 = f(x);
    let k2 = f(&axpy(x, h / 2.0, &k1));
    let k3 = f(&axpy(x, h / 2.0, &k2));
    let k4 = f(&axpy(x, h, &k3));
    std::array::from_fn(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// One RK4 step of the plant with the input held over `[0, ts]`.
pub fn rk4_step(x: &State, u: &Control, p: &PlantParams, ts: f64) -> State {
    let next = rk4(&x.to_array(), ts, |s| plant_derivative(&State::from_array(*s), u, p));
    State::from_array(next)
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Uniform state inside the output limits: positions in `[-w, w]²`, tractor
/// heading in `[-π, π]`, trailer heading within the jack-knife bound of it.
pub fn sample_state<R: rand::Rng>(rng: &mut R, lim: &Limits, workspace: f64) -> State {
    use std::f64::consts::PI;
    let theta0 = rng.gen_range(-PI..=PI);
    State {
        x0: rng.gen_range(-workspace..=workspace),
        y0: rng.gen_range(-workspace..=workspace),
        theta0,
        theta1: theta0 - rng.gen_range(-lim.dtheta_max..=lim.dtheta_max),
        tan_phi: rng.gen_range(-lim.tan_phi_max..=lim.tan_phi_max),
        v: rng.gen_range(-lim.v_max..=lim.v_max),
    }
}

/// Uniform input inside the input limits.
pub fn sample_control<R: rand::Rng>(rng: &mut R, lim: &Limits) -> Control {
    Control {
        omega: rng.gen_range(-lim.omega_max..=lim.omega_max),
        a: rng.gen_range(-lim.a_max..=lim.a_max),
    }
}

/// The plant as a control-affine system over expressions, for derivative
/// chains and Jacobians. Output is `[x, x1, y1]`.
pub fn tractor_trailer_system(p: &PlantParams) -> ControlAffineSystem {
    let v = |k| Expr::var(k);
    let (th0, th1, tphi, vel) = (v(2), v(3), v(4), v(5));
    let mv = vel.scale(p.mu);
    let tk = tphi.atan().scale(p.kappa).tan();
    let d = &th0 - &th1;
    let drift: Vec<ScalarField> = vec![
        (&mv * &th0.cos()).into(),
        (&mv * &th0.sin()).into(),
        (&mv * &tk).scale(1.0 / p.l0).into(),
        (&mv * &(d.sin() - (&tk * &d.cos()).scale(p.lh / p.l0))).scale(1.0 / p.l1).into(),
        ScalarField::constant(0.0),
        ScalarField::constant(0.0),
    ];
    let unit = |k: usize| -> Vec<ScalarField> {
        (0..N_STATE).map(|i| ScalarField::constant(if i == k { 1.0 } else { 0.0 })).collect()
    };
    let mut output: Vec<ScalarField> = (0..N_STATE).map(|k| v(k).into()).collect();
    output.push((v(0) - th0.cos().scale(p.lh) - th1.cos().scale(p.l1)).into());
    output.push((v(1) - th0.sin().scale(p.lh) - th1.sin().scale(p.l1)).into());
    ControlAffineSystem::new(N_STATE, drift, vec![unit(4), unit(5)], output).expect("static dimensions")
}
